//! Spatio-temporal aggregation of local frame features for real/fake
//! expression prediction.
//!
//! The pipeline consumes per-video sequences of local feature vectors
//! (M positions per frame, D dimensions each), pools short frame grids
//! with sketch-based compact bilinear pooling, encodes grid sequences
//! with a small recurrent model, pools interval representations into a
//! single video-level vector, and classifies it with a linear SVM, one
//! model per emotion type.
//!
//! The crate is deliberately self-contained: FFT, poolers, PCA, the
//! recurrent cells, Adam, and the SVM solver are all implemented here
//! in plain f64 so every gradient can be checked against central finite
//! differences and every run is bit-reproducible from a seed.

pub mod classify;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod fsutil;
pub mod mat;
pub mod numkit;
pub mod optim;
pub mod pipeline;
pub mod pooling;
pub mod seeds;
pub mod temporal;

pub use error::{Result, StagError};
