use serde::Serialize;

/// The resolved parameters of one run, echoed into every report. The output
/// path and the worker count are left out: neither changes the result.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct RunConfig {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prop: Option<u8>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    pub format: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub L: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub T: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub M: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub N: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment_reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controls: Option<usize>,
}

/// A report with its provenance.
#[derive(Debug, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub artifact: &'static str,
    pub version: &'static str,
    pub config: &'a RunConfig,
    pub pass: Option<bool>,
    pub report: &'a T,
}

impl<'a, T: Serialize> Envelope<'a, T> {
    pub fn new(config: &'a RunConfig, pass: Option<bool>, report: &'a T) -> Self {
        Envelope {
            artifact: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config,
            pass,
            report,
        }
    }
}
