//! WebAssembly bindings for the static demo page in `www/`. Every function
//! returns JSON text; errors surface in JavaScript as thrown strings.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use quantgest::classify::{classify, ClassificationResult, ClassifierConfig};
use quantgest::drift::{drift_closed_form, drift_curve, log_log_slope};
use quantgest::eval::{train_all, TrainOptions};
use quantgest::model::GestureModel;
use quantgest::quantize::{codeword_probabilities_gmm, codeword_probabilities_inverse_distance, nearest_codeword, QuantizerKind};
use quantgest::synth::{benchmark_templates, generate_gesture, gesture_noise, synthetic_dataset, template, NoiseSpec, SyntheticSpec};

const DEMO_SAMPLES: usize = 60;

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn err(e: quantgest::Error) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct DriftSeries {
    angle_deg: f64,
    t: Vec<f64>,
    error: Vec<f64>,
    closed_form: Vec<f64>,
    slope: Option<f64>,
}

/// Position error of a still phone whose pitch is off by each angle (degrees).
#[wasm_bindgen]
pub fn drift(angles_deg: &[f64], duration: f64, dt: f64) -> Result<String, String> {
    let mut series = Vec::new();
    for &deg in angles_deg {
        let rad = deg.to_radians();
        let pts = drift_curve(&[rad], duration, dt).map_err(err)?;
        series.push(DriftSeries {
            angle_deg: deg,
            t: pts.iter().map(|p| p.t).collect(),
            error: pts.iter().map(|p| p.position_error).collect(),
            closed_form: pts.iter().map(|p| drift_closed_form(rad, p.t)).collect(),
            slope: log_log_slope(&pts),
        });
    }
    to_json(&series)
}

/// Models trained on synthetic data, kept alive between calls from the page.
#[wasm_bindgen]
pub struct Demo {
    models: Vec<GestureModel>,
    templates: Vec<String>,
    seed: u64,
}

#[derive(Serialize)]
struct Distributions {
    label: String,
    codewords: Vec<[f64; 3]>,
    nearest: usize,
    gmm: Vec<f64>,
    inverse_distance: Vec<f64>,
}

#[derive(Serialize)]
struct DemoClassification {
    truth: String,
    #[serde(flatten)]
    result: ClassificationResult,
}

#[wasm_bindgen]
impl Demo {
    /// Trains one model per gesture for the first `n_gestures` built-in
    /// templates.
    #[wasm_bindgen(constructor)]
    pub fn new(n_gestures: usize, seed: u32) -> Result<Demo, String> {
        let templates = benchmark_templates(n_gestures).map_err(err)?;
        let spec = SyntheticSpec { templates: templates.clone(), seed: seed as u64, ..Default::default() };
        let data = synthetic_dataset(&spec, Some(DEMO_SAMPLES)).map_err(err)?;
        let trained = train_all(&data, &TrainOptions { seed: seed as u64, ..Default::default() }).map_err(err)?;
        Ok(Demo { models: trained.models, templates, seed: seed as u64 })
    }

    pub fn labels(&self) -> Result<String, String> {
        to_json(&self.models.iter().map(|m| &m.label).collect::<Vec<_>>())
    }

    /// Where one acceleration sample (g) lands in a gesture's codebook under
    /// each statistical quantizer.
    pub fn distributions(&self, gesture: usize, x: f64, y: f64, z: f64) -> Result<String, String> {
        let m = self.models.get(gesture).ok_or_else(|| format!("no gesture {gesture}"))?;
        let p = [x, y, z];
        let gmm = codeword_probabilities_gmm(&p, &m.codebook, &m.error_model).map_err(err)?;
        to_json(&Distributions {
            label: m.label.clone(),
            codewords: m.codebook.codewords().to_vec(),
            nearest: nearest_codeword(&p, &m.codebook),
            gmm: gmm.probabilities().to_vec(),
            inverse_distance: codeword_probabilities_inverse_distance(&p, &m.codebook).probabilities().to_vec(),
        })
    }

    /// Performs gesture `truth` once with fresh noise (scaled by
    /// `noise_scale`) and classifies it.
    pub fn classify(&self, truth: usize, noise_scale: f64, thr: f64, quantizer: &str, seed: u32) -> Result<String, String> {
        let label = &self.models.get(truth).ok_or_else(|| format!("no gesture {truth}"))?.label;
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(format!("noise scale must be non-negative, got {noise_scale}"));
        }
        let quantizer: QuantizerKind = quantizer.parse().map_err(err)?;
        if quantizer.codebook_shape() != self.models[0].codebook.shape() {
            return Err(format!("{quantizer} needs models trained with its own codebook family"));
        }
        // Same sensor noise the gesture was trained with.
        let k = self.templates.iter().position(|t| t == label).unwrap_or(truth);
        let noise = NoiseSpec {
            axis_std: gesture_noise(self.seed, k).map(|s| s * noise_scale),
            orientation_std: 0.02,
            speed_jitter: 0.1,
            seed: seed as u64 ^ 0x5eed_0000_0000,
        };
        let trace = generate_gesture(&template(label).map_err(err)?, &noise, DEMO_SAMPLES).map_err(err)?;
        let cfg = ClassifierConfig { quantizer, thr, seed: seed as u64, ..Default::default() };
        let result = classify(&trace, &self.models, &cfg).map_err(err)?;
        to_json(&DemoClassification { truth: label.clone(), result })
    }
}
