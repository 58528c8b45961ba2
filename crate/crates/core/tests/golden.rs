//! A checked-in model file must keep loading, keep its byte layout and keep
//! producing the same generator outputs.

use std::path::Path;

use cpfn::model::{cpfn_forward, load_model, serialize_model};
use serde_json::Value;

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden_model.json");

fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Straight-line reading of the file: dense layers by segment name, gelu
/// hidden units, identity `phi` output, gelu `psi` output, rank-major
/// combination.
fn reference_forward(doc: &Value, x: &[f64], u: &[f64]) -> Vec<f64> {
    let m = &doc["model"];
    let values: Vec<f64> = m["params"]["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let seg = |name: &str| -> (usize, usize, usize) {
        let s = m["params"]["segments"].as_array().unwrap().iter().find(|s| s["name"] == name).unwrap();
        let g = |k: &str| s[k].as_u64().unwrap() as usize;
        (g("offset"), g("rows"), g("cols"))
    };
    let net = |prefix: &str, layers: usize, input: &[f64], gelu_out: bool| -> Vec<f64> {
        let mut h = input.to_vec();
        for k in 0..layers {
            let (wo, rows, cols) = seg(&format!("{prefix}.w{k}"));
            let (bo, _, _) = seg(&format!("{prefix}.b{k}"));
            let mut next = vec![0.0; cols];
            for (j, out) in next.iter_mut().enumerate() {
                *out = values[bo + j];
                for (i, hi) in h.iter().enumerate().take(rows) {
                    *out += hi * values[wo + i * cols + j];
                }
            }
            if k + 1 < layers || gelu_out {
                next.iter_mut().for_each(|v| *v = gelu(*v));
            }
            h = next;
        }
        h
    };
    let layers = |arch: &Value| arch["hidden_widths"].as_array().unwrap().len() + 1;
    let phi = net("phi", layers(&m["phi"]), x, false);
    let psi = net("psi", layers(&m["psi"]), u, true);
    let q = m["q"].as_u64().unwrap() as usize;
    let mut y = vec![0.0; q];
    for (k, (p, s)) in phi.iter().zip(&psi).enumerate() {
        y[k % q] += p * s;
    }
    y
}

#[test]
fn golden_model_loads_and_round_trips_bytes() {
    let bytes = std::fs::read(GOLDEN).unwrap();
    let model = load_model(Path::new(GOLDEN)).unwrap();
    assert_eq!((model.d, model.q, model.rank), (5, 2, 2));
    assert_eq!(model.provenance.seed, Some(11));
    assert_eq!(serialize_model(&model).unwrap(), bytes);
}

#[test]
fn golden_model_matches_straight_line_evaluation() {
    let doc: Value = serde_json::from_slice(&std::fs::read(GOLDEN).unwrap()).unwrap();
    let model = load_model(Path::new(GOLDEN)).unwrap();
    let cases: [([f64; 5], [f64; 2]); 3] = [
        ([0.0; 5], [0.0, 0.0]),
        ([0.3, -1.2, 0.8, 2.0, -0.5], [1.1, -0.4]),
        ([-2.5, 0.1, 1.7, -0.9, 0.6], [-1.8, 2.2]),
    ];
    for (x, u) in cases {
        let got = cpfn_forward(&model, &x, &u).unwrap();
        let want = reference_forward(&doc, &x, &u);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn golden_model_pinned_outputs() {
    let model = load_model(Path::new(GOLDEN)).unwrap();
    let got = cpfn_forward(&model, &[0.3, -1.2, 0.8, 2.0, -0.5], &[1.1, -0.4]).unwrap();
    let pinned = [PINNED_0, PINNED_1];
    for (g, p) in got.iter().zip(pinned) {
        assert!((g - p).abs() < 1e-12, "{got:?}");
    }
}

const PINNED_0: f64 = 0.061043746682119204;
const PINNED_1: f64 = 0.7054988825508621;
