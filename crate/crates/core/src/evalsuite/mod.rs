//! Detection and matching metrics, homography estimation and the benchmark protocols.

pub mod bench;
pub mod matching;
pub mod metrics;
pub mod ransac;

pub use bench::{run_detector_benchmark, run_matching_benchmark, run_synthetic_benchmark, EvalReport, WarpedPair};
pub use matching::{match_nn, matching_score, nn_map, Features, Match, MatchSet};
pub use metrics::{average_precision, correct, localization_error, repeatability};
pub use ransac::{estimate_homography, homography_correctness, RansacConfig};
