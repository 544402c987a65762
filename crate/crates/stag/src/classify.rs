//! Linear SVM over video representations and the challenge metric.
//!
//! The solver works on the usual hinge-loss primal
//!   min 1/2 ||w||^2 + C sum_i max(0, 1 - y_i (w.x_i + b))
//! through its dual, with exact two-variable (SMO) updates on the
//! maximal violating pair. The bias is recovered afterwards by a scan
//! over the piecewise-linear primal in b. Everything is deterministic:
//! pair selection breaks ties toward the lowest index, so identical
//! inputs produce identical models.

use crate::error::{Result, StagError};
use crate::mat::dot;
use crate::pipeline::{Emotion, Label};

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
}

#[derive(Clone, Debug)]
pub struct SvmTrace {
    /// Objective after each epoch (n pair steps), non-increasing.
    pub objectives: Vec<f64>,
    pub duality_gap: f64,
    pub epochs: usize,
    pub converged: bool,
}

fn label_y(l: Label) -> f64 {
    match l {
        Label::Real => 1.0,
        Label::Fake => -1.0,
    }
}

fn check_training_inputs(xs: &[&[f64]], ys: &[Label], c: f64) -> Result<usize> {
    if xs.is_empty() {
        return Err(StagError::EmptyInput("svm_train needs samples"));
    }
    if xs.len() != ys.len() {
        return Err(StagError::InvalidLength(format!(
            "{} samples but {} labels",
            xs.len(),
            ys.len()
        )));
    }
    let d = xs[0].len();
    if d == 0 {
        return Err(StagError::EmptyInput("zero-dimensional samples"));
    }
    if let Some(bad) = xs.iter().find(|x| x.len() != d) {
        return Err(StagError::InvalidLength(format!(
            "mixed sample dims {} and {}",
            d,
            bad.len()
        )));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(StagError::InvalidSpec(format!("svm penalty must be positive, got {c}")));
    }
    let pos = ys.iter().filter(|&&y| y == Label::Real).count();
    if pos == 0 || pos == ys.len() {
        return Err(StagError::DegenerateLabels(
            "svm training data has a single class".into(),
        ));
    }
    Ok(d)
}

/// Hinge-loss primal objective at (w, b).
pub fn primal_objective(w: &[f64], b: f64, xs: &[&[f64]], ys: &[Label], c: f64) -> f64 {
    let margin_loss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &l)| (1.0 - label_y(l) * (dot(w, x) + b)).max(0.0))
        .sum();
    0.5 * dot(w, w) + c * margin_loss
}

/// Optimal bias for a fixed w: the hinge sum is piecewise linear in b
/// with breakpoints t_i = y_i - w.x_i, slope -C n_pos left of them all
/// and +C per crossed breakpoint; the midpoint of the zero-slope
/// interval is returned.
fn optimal_bias(w: &[f64], xs: &[&[f64]], ys: &[Label]) -> f64 {
    let mut t: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, &l)| label_y(l) - dot(w, x))
        .collect();
    t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n_pos = ys.iter().filter(|&&l| l == Label::Real).count();
    // Slope after passing k breakpoints is C (k - n_pos); it reaches zero
    // exactly when k = n_pos, on the interval [t[n_pos-1], t[n_pos]].
    if n_pos == t.len() {
        return t[t.len() - 1];
    }
    0.5 * (t[n_pos - 1] + t[n_pos])
}

const SMO_TOL: f64 = 1e-9;
const SMO_MAX_EPOCHS: usize = 2000;

/// Train and keep the per-epoch objective trace.
pub fn svm_train_traced(xs: &[&[f64]], ys: &[Label], c: f64) -> Result<(SvmModel, SvmTrace)> {
    let d = check_training_inputs(xs, ys, c)?;
    let n = xs.len();
    let y: Vec<f64> = ys.iter().map(|&l| label_y(l)).collect();

    // Gram matrix; n is the number of videos of one emotion, so this
    // stays small.
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k = dot(xs[i], xs[j]);
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }

    let mut alpha = vec![0.0; n];
    // u = Q alpha with Q_ij = y_i y_j K_ij; the dual gradient is u - 1.
    let mut u = vec![0.0; n];
    let mut objectives = Vec::new();
    let mut converged = false;
    let mut epochs = 0;

    'outer: for _ in 0..SMO_MAX_EPOCHS {
        for _ in 0..n {
            // Maximal violating pair over -y_i grad_i, lowest index on ties.
            let mut i_up: Option<(usize, f64)> = None;
            let mut j_low: Option<(usize, f64)> = None;
            for i in 0..n {
                let v = -y[i] * (u[i] - 1.0);
                let pos = y[i] > 0.0;
                if (pos && alpha[i] < c) || (!pos && alpha[i] > 0.0) {
                    if i_up.map(|(_, best)| v > best).unwrap_or(true) {
                        i_up = Some((i, v));
                    }
                }
                if (pos && alpha[i] > 0.0) || (!pos && alpha[i] < c) {
                    if j_low.map(|(_, best)| v < best).unwrap_or(true) {
                        j_low = Some((i, v));
                    }
                }
            }
            let ((i, m_up), (j, m_low)) = (i_up.unwrap(), j_low.unwrap());
            if m_up - m_low < SMO_TOL {
                converged = true;
                let f = 0.5 * dot(&alpha, &u) - alpha.iter().sum::<f64>();
                objectives.push(f);
                epochs += 1;
                break 'outer;
            }

            // Feasible direction d_i = y_i, d_j = -y_j keeps sum(alpha y)
            // fixed; exact minimizer along it, clipped to the box.
            let q = gram[i * n + i] + gram[j * n + j] - 2.0 * gram[i * n + j];
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for (idx, dir) in [(i, y[i]), (j, -y[j])] {
                // alpha[idx] + dir * delta must stay in [0, c].
                if dir > 0.0 {
                    lo = lo.max(-alpha[idx] / dir);
                    hi = hi.min((c - alpha[idx]) / dir);
                } else {
                    lo = lo.max((c - alpha[idx]) / dir);
                    hi = hi.min(-alpha[idx] / dir);
                }
            }
            let delta = if q > 1e-12 {
                ((m_up - m_low) / q).clamp(lo, hi)
            } else {
                hi
            };
            if delta == 0.0 {
                continue;
            }
            alpha[i] += y[i] * delta;
            alpha[j] -= y[j] * delta;
            for k in 0..n {
                u[k] += y[k] * delta * (gram[k * n + i] - gram[k * n + j]);
            }
        }
        let f = 0.5 * dot(&alpha, &u) - alpha.iter().sum::<f64>();
        if let Some(&prev) = objectives.last() {
            assert!(
                f <= prev + 1e-9 * (1.0 + prev.abs()),
                "dual objective increased: {prev} -> {f}"
            );
        }
        objectives.push(f);
        epochs += 1;
    }

    let mut w = vec![0.0; d];
    for i in 0..n {
        if alpha[i] != 0.0 {
            let s = alpha[i] * y[i];
            for (wk, &xk) in w.iter_mut().zip(xs[i]) {
                *wk += s * xk;
            }
        }
    }
    let b = optimal_bias(&w, xs, ys);
    let model = SvmModel {
        weights: w,
        bias: b,
        c,
    };
    let dual_value = alpha.iter().sum::<f64>() - 0.5 * dot(&alpha, &u);
    let primal = primal_objective(&model.weights, model.bias, xs, ys, c);
    let trace = SvmTrace {
        objectives,
        duality_gap: primal - dual_value,
        epochs,
        converged,
    };
    Ok((model, trace))
}

pub fn svm_train(xs: &[&[f64]], ys: &[Label], c: f64) -> Result<SvmModel> {
    Ok(svm_train_traced(xs, ys, c)?.0)
}

/// Raw decision value w.x + b.
pub fn svm_margin(model: &SvmModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.weights.len() {
        return Err(StagError::InvalidLength(format!(
            "sample dim {} does not match model dim {}",
            x.len(),
            model.weights.len()
        )));
    }
    Ok(dot(&model.weights, x) + model.bias)
}

/// Thresholded decision; an exact zero counts as real.
pub fn svm_predict(model: &SvmModel, x: &[f64]) -> Result<Label> {
    Ok(if svm_margin(model, x)? >= 0.0 {
        Label::Real
    } else {
        Label::Fake
    })
}

/// Brute-force reference: multi-resolution grid search over (w, b),
/// shrinking the box around the best grid point each round. The primal
/// is convex, so the zoom cannot lose the optimum region. Intended for
/// tiny dimensions in validation suites.
pub fn svm_grid_oracle(xs: &[&[f64]], ys: &[Label], c: f64) -> Result<(Vec<f64>, f64, f64)> {
    let d = check_training_inputs(xs, ys, c)?;
    let coords = d + 1;
    let mut center = vec![0.0; coords];
    let mut half = 5.0;
    let grid = 9usize;
    let mut best_point = center.clone();
    let mut best = f64::INFINITY;
    for _ in 0..24 {
        let mut idx = vec![0usize; coords];
        loop {
            let point: Vec<f64> = idx
                .iter()
                .zip(&center)
                .map(|(&i, &c0)| c0 - half + 2.0 * half * i as f64 / (grid - 1) as f64)
                .collect();
            let f = primal_objective(&point[..d], point[d], xs, ys, c);
            if f < best {
                best = f;
                best_point = point;
            }
            // Odometer over the grid.
            let mut pos = 0;
            loop {
                idx[pos] += 1;
                if idx[pos] < grid {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
                if pos == coords {
                    break;
                }
            }
            if pos == coords {
                break;
            }
        }
        center = best_point.clone();
        half /= 2.0;
    }
    Ok((best_point[..d].to_vec(), best_point[d], best))
}

/// One prediction with its ranking margin.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoDecision {
    pub video_id: String,
    pub emotion: Emotion,
    pub predicted: Label,
    pub margin: f64,
}

/// Ground truth for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTruth {
    pub video_id: String,
    pub emotion: Emotion,
    pub label: Label,
}

/// Challenge metric: per-emotion classification accuracy and their
/// unweighted mean, plus ranking average precision over the margins as
/// a secondary statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    /// Accuracy per emotion, indexed like Emotion::ALL.
    pub per_emotion: [f64; 6],
    pub overall: f64,
    /// Video count per emotion.
    pub counts: [usize; 6],
    /// Average precision of ranking real above fake by margin.
    pub average_precision: [f64; 6],
    pub mean_average_precision: f64,
}

pub fn evaluate(decisions: &[VideoDecision], truth: &[VideoTruth]) -> Result<EvaluationReport> {
    if truth.is_empty() {
        return Err(StagError::IncompleteEvaluation("no ground truth videos".into()));
    }
    let mut truth_by_id: std::collections::HashMap<&str, &VideoTruth> =
        std::collections::HashMap::new();
    for t in truth {
        if truth_by_id.insert(t.video_id.as_str(), t).is_some() {
            return Err(StagError::IncompleteEvaluation(format!(
                "duplicate ground truth for video {}",
                t.video_id
            )));
        }
    }
    let mut seen: std::collections::HashSet<&str> = std::collections::HashSet::new();
    for d in decisions {
        if !truth_by_id.contains_key(d.video_id.as_str()) {
            return Err(StagError::IncompleteEvaluation(format!(
                "prediction for unknown video {}",
                d.video_id
            )));
        }
        if !seen.insert(d.video_id.as_str()) {
            return Err(StagError::IncompleteEvaluation(format!(
                "duplicate prediction for video {}",
                d.video_id
            )));
        }
    }
    if seen.len() != truth.len() {
        let missing = truth
            .iter()
            .find(|t| !seen.contains(t.video_id.as_str()))
            .unwrap();
        return Err(StagError::IncompleteEvaluation(format!(
            "no prediction for video {}",
            missing.video_id
        )));
    }

    let mut counts = [0usize; 6];
    let mut correct = [0usize; 6];
    // (margin, id, is_real) per emotion for the ranking statistic.
    let mut ranking: [Vec<(f64, &str, bool)>; 6] = Default::default();
    for d in decisions {
        let t = truth_by_id[d.video_id.as_str()];
        if t.emotion != d.emotion {
            return Err(StagError::IncompleteEvaluation(format!(
                "video {} tagged {} in predictions but {} in truth",
                d.video_id, d.emotion, t.emotion
            )));
        }
        let e = d.emotion.index();
        counts[e] += 1;
        if d.predicted == t.label {
            correct[e] += 1;
        }
        ranking[e].push((d.margin, d.video_id.as_str(), t.label == Label::Real));
    }
    if let Some(e) = Emotion::ALL.iter().find(|e| counts[e.index()] == 0) {
        return Err(StagError::IncompleteEvaluation(format!(
            "no videos for emotion {e}"
        )));
    }

    let mut per_emotion = [0.0; 6];
    let mut average_precision = [0.0; 6];
    for e in 0..6 {
        per_emotion[e] = correct[e] as f64 / counts[e] as f64;
        ranking[e].sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then_with(|| a.1.cmp(b.1))
        });
        let n_pos = ranking[e].iter().filter(|r| r.2).count();
        if n_pos > 0 {
            let mut hits = 0usize;
            let mut ap = 0.0;
            for (rank, item) in ranking[e].iter().enumerate() {
                if item.2 {
                    hits += 1;
                    ap += hits as f64 / (rank + 1) as f64;
                }
            }
            average_precision[e] = ap / n_pos as f64;
        }
    }
    let overall = per_emotion.iter().sum::<f64>() / 6.0;
    let mean_average_precision = average_precision.iter().sum::<f64>() / 6.0;
    Ok(EvaluationReport {
        per_emotion,
        overall,
        counts,
        average_precision,
        mean_average_precision,
    })
}

impl EvaluationReport {
    /// Aligned per-emotion table with the mean row last.
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<12} {:>9} {:>8} {:>7}\n", "emotion", "accuracy", "videos", "ap"));
        for e in Emotion::ALL {
            let i = e.index();
            out.push_str(&format!(
                "{:<12} {:>8.2}% {:>8} {:>7.3}\n",
                e.as_str(),
                100.0 * self.per_emotion[i],
                self.counts[i],
                self.average_precision[i]
            ));
        }
        out.push_str(&format!(
            "{:<12} {:>8.2}% {:>8} {:>7.3}\n",
            "average",
            100.0 * self.overall,
            self.counts.iter().sum::<usize>(),
            self.mean_average_precision
        ));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("emotion,accuracy\n");
        for e in Emotion::ALL {
            out.push_str(&format!("{},{}\n", e.as_str(), self.per_emotion[e.index()]));
        }
        out.push_str(&format!("average,{}\n", self.overall));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn views(xs: &[Vec<f64>]) -> Vec<&[f64]> {
        xs.iter().map(|x| x.as_slice()).collect()
    }

    #[test]
    fn separable_pair_in_one_dimension() {
        let xs = vec![vec![1.0], vec![-1.0]];
        let ys = vec![Label::Real, Label::Fake];
        let (model, trace) = svm_train_traced(&views(&xs), &ys, 1.0).unwrap();
        assert!(trace.converged);
        assert!((model.weights[0] - 1.0).abs() < 1e-6);
        assert!(model.bias.abs() < 1e-6);
        assert_eq!(svm_predict(&model, &[1.0]).unwrap(), Label::Real);
        assert_eq!(svm_predict(&model, &[-1.0]).unwrap(), Label::Fake);
        let obj = primal_objective(&model.weights, model.bias, &views(&xs), &ys, 1.0);
        assert!((obj - 0.5).abs() < 1e-6, "objective {obj}");
    }

    fn blob_instance(seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut rng = crate::seeds::rng(seed, "svm-blobs");
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..20 {
            let real = i % 2 == 0;
            let cx = if real { 1.2 } else { -1.2 };
            xs.push(vec![
                cx + rng.random_range(-0.7..0.7),
                rng.random_range(-1.0..1.0) + if real { 0.4 } else { -0.4 },
            ]);
            ys.push(if real { Label::Real } else { Label::Fake });
        }
        (xs, ys)
    }

    #[test]
    fn solver_matches_grid_oracle_on_25_seeds() {
        for seed in 0..25u64 {
            let (xs, ys) = blob_instance(seed);
            let xv = views(&xs);
            let (model, trace) = svm_train_traced(&xv, &ys, 1.0).unwrap();
            assert!(trace.converged, "seed {seed} did not converge");
            for pair in trace.objectives.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-9 * (1.0 + pair[0].abs()),
                    "seed {seed}: objective rose {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
            let ours = primal_objective(&model.weights, model.bias, &xv, &ys, 1.0);
            let (_, _, oracle) = svm_grid_oracle(&xv, &ys, 1.0).unwrap();
            assert!(
                (ours - oracle).abs() < 1e-3,
                "seed {seed}: solver {ours} vs oracle {oracle}"
            );
            assert!(
                trace.duality_gap.abs() < 1e-6 * (1.0 + ours.abs()),
                "seed {seed}: duality gap {}",
                trace.duality_gap
            );
        }
    }

    #[test]
    fn duplicated_dataset_with_halved_penalty_is_identical() {
        let (xs, ys) = blob_instance(99);
        let xv = views(&xs);
        let base = svm_train(&xv, &ys, 1.0).unwrap();
        let mut xs2 = xs.clone();
        xs2.extend_from_slice(&xs);
        let mut ys2 = ys.clone();
        ys2.extend_from_slice(&ys);
        let doubled = svm_train(&views(&xs2), &ys2, 0.5).unwrap();
        for (a, b) in base.weights.iter().zip(&doubled.weights) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!((base.bias - doubled.bias).abs() < 1e-6);
    }

    #[test]
    fn feature_scaling_with_rescaled_penalty_keeps_decisions() {
        let (xs, ys) = blob_instance(123);
        let base = svm_train(&views(&xs), &ys, 1.0).unwrap();
        let s = 3.0;
        let scaled: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| x.iter().map(|v| v * s).collect())
            .collect();
        let rescaled = svm_train(&views(&scaled), &ys, 1.0 / (s * s)).unwrap();
        for (x, xs_v) in xs.iter().zip(&scaled) {
            let a = svm_predict(&base, x).unwrap();
            let b = svm_predict(&rescaled, xs_v).unwrap();
            assert_eq!(a, b);
            let ma = svm_margin(&base, x).unwrap();
            let mb = svm_margin(&rescaled, xs_v).unwrap();
            assert!((ma - mb).abs() < 1e-5, "{ma} vs {mb}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, ys) = blob_instance(7);
        let a = svm_train(&views(&xs), &ys, 1.0).unwrap();
        let b = svm_train(&views(&xs), &ys, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_and_malformed_inputs() {
        let xs = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            svm_train(&views(&xs), &[Label::Real, Label::Real], 1.0),
            Err(StagError::DegenerateLabels(_))
        ));
        assert!(matches!(
            svm_train(&[], &[], 1.0),
            Err(StagError::EmptyInput(_))
        ));
        let mixed = vec![vec![1.0], vec![2.0, 3.0]];
        assert!(matches!(
            svm_train(&views(&mixed), &[Label::Real, Label::Fake], 1.0),
            Err(StagError::InvalidLength(_))
        ));
        assert!(matches!(
            svm_train(&views(&xs), &[Label::Real, Label::Fake], 0.0),
            Err(StagError::InvalidSpec(_))
        ));
        let model = SvmModel {
            weights: vec![1.0, 2.0],
            bias: 0.0,
            c: 1.0,
        };
        assert!(matches!(
            svm_predict(&model, &[1.0]),
            Err(StagError::InvalidLength(_))
        ));
    }

    #[test]
    fn tie_breaks_to_real_and_margin_is_exact() {
        let model = SvmModel {
            weights: vec![2.0, -1.0],
            bias: 0.5,
            c: 1.0,
        };
        assert_eq!(svm_predict(&model, &[0.0, 0.5]).unwrap(), Label::Real);
        let x = [0.25, 1.0];
        assert_eq!(svm_margin(&model, &x).unwrap(), 2.0 * 0.25 - 1.0 + 0.5);
        let zero = SvmModel {
            weights: vec![0.0],
            bias: 0.0,
            c: 1.0,
        };
        assert_eq!(svm_predict(&zero, &[0.0]).unwrap(), Label::Real);
    }

    fn synthetic_split(correct_per_emotion: [usize; 6]) -> (Vec<VideoDecision>, Vec<VideoTruth>) {
        let mut decisions = Vec::new();
        let mut truth = Vec::new();
        for e in Emotion::ALL {
            for i in 0..10 {
                let id = format!("{}-{i}", e.as_str());
                let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
                let correct = i < correct_per_emotion[e.index()];
                let predicted = if correct {
                    label
                } else if label == Label::Real {
                    Label::Fake
                } else {
                    Label::Real
                };
                let margin = match predicted {
                    Label::Real => 1.0 + i as f64 * 0.01,
                    Label::Fake => -1.0 - i as f64 * 0.01,
                };
                decisions.push(VideoDecision {
                    video_id: id.clone(),
                    emotion: e,
                    predicted,
                    margin,
                });
                truth.push(VideoTruth {
                    video_id: id,
                    emotion: e,
                    label,
                });
            }
        }
        (decisions, truth)
    }

    #[test]
    fn perfect_predictions_score_one() {
        let (decisions, truth) = synthetic_split([10; 6]);
        let report = evaluate(&decisions, &truth).unwrap();
        assert!(report.per_emotion.iter().all(|&a| a == 1.0));
        assert_eq!(report.overall, 1.0);
        assert!(report.average_precision.iter().all(|&a| a == 1.0));
    }

    #[test]
    fn published_accuracy_shape_reproduces_the_average() {
        let (decisions, truth) = synthetic_split([8, 7, 6, 7, 6, 7]);
        let report = evaluate(&decisions, &truth).unwrap();
        assert_eq!(
            report.per_emotion,
            [0.8, 0.7, 0.6, 0.7, 0.6, 0.7]
        );
        assert!((report.overall - 0.68333333333333333).abs() < 1e-12);
        assert!((100.0 * report.overall - 68.33).abs() < 0.01);
        let mean: f64 = report.per_emotion.iter().sum::<f64>() / 6.0;
        assert!((report.overall - mean).abs() < 1e-12);
        assert_eq!(report.counts, [10; 6]);
    }

    #[test]
    fn evaluation_is_order_invariant() {
        let (mut decisions, mut truth) = synthetic_split([8, 7, 6, 7, 6, 7]);
        let base = evaluate(&decisions, &truth).unwrap();
        decisions.reverse();
        decisions.swap(3, 40);
        truth.reverse();
        let shuffled = evaluate(&decisions, &truth).unwrap();
        assert_eq!(base, shuffled);
    }

    #[test]
    fn incomplete_evaluations_are_rejected() {
        let (decisions, truth) = synthetic_split([10; 6]);

        let mut missing_emotion = truth.clone();
        let mut fewer_decisions = decisions.clone();
        missing_emotion.retain(|t| t.emotion != Emotion::Sadness);
        fewer_decisions.retain(|d| d.emotion != Emotion::Sadness);
        match evaluate(&fewer_decisions, &missing_emotion) {
            Err(StagError::IncompleteEvaluation(msg)) => {
                assert!(msg.contains("sadness"), "{msg}")
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut dup = decisions.clone();
        dup.push(dup[0].clone());
        assert!(matches!(
            evaluate(&dup, &truth),
            Err(StagError::IncompleteEvaluation(_))
        ));

        let mut short = decisions.clone();
        short.pop();
        assert!(matches!(
            evaluate(&short, &truth),
            Err(StagError::IncompleteEvaluation(_))
        ));

        let mut unknown = decisions.clone();
        unknown[0].video_id = "ghost".into();
        assert!(matches!(
            evaluate(&unknown, &truth),
            Err(StagError::IncompleteEvaluation(_))
        ));
    }

    #[test]
    fn ranking_statistic_orders_by_margin() {
        let mut decisions = Vec::new();
        let mut truth = Vec::new();
        for e in Emotion::ALL {
            for i in 0..4 {
                let id = format!("{}-{i}", e.as_str());
                let label = if i < 2 { Label::Real } else { Label::Fake };
                decisions.push(VideoDecision {
                    video_id: id.clone(),
                    emotion: e,
                    predicted: label,
                    // Real videos rank strictly above fake ones.
                    margin: if label == Label::Real { 2.0 - i as f64 * 0.1 } else { -1.0 - i as f64 },
                });
                truth.push(VideoTruth {
                    video_id: id,
                    emotion: e,
                    label,
                });
            }
        }
        let report = evaluate(&decisions, &truth).unwrap();
        assert!(report.average_precision.iter().all(|&ap| ap == 1.0));
        assert_eq!(report.mean_average_precision, 1.0);
    }

    #[test]
    fn report_formats() {
        let (decisions, truth) = synthetic_split([8, 7, 6, 7, 6, 7]);
        let report = evaluate(&decisions, &truth).unwrap();
        let table = report.format_table();
        assert!(table.contains("anger"));
        assert!(table.contains("80.00%"));
        assert!(table.contains("average"));
        assert!(table.contains("68.33%"));
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("emotion,accuracy"));
        assert_eq!(lines.next(), Some("anger,0.8"));
        assert!(csv.ends_with(&format!("average,{}\n", report.overall)));
    }
}
