//! Model serialization: a JSON document holding the gate bank and the
//! network parameters. Loading reproduces forward outputs exactly (floats
//! survive the JSON round trip bit-for-bit).

use std::path::Path;

use galu_core::network::{GateBank, GateSource, NaturalParams};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
struct ModelJson {
    d: usize,
    k: usize,
    gate_source: String,
    seed: u64,
    /// d×k gate matrix in row-major order.
    gates: Vec<f64>,
    /// d×k weight matrix in row-major order.
    weights: Vec<f64>,
    alpha: Vec<f64>,
    normalized: bool,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn save_model(
    path: &Path,
    gates: &GateBank,
    params: &NaturalParams,
    normalized: bool,
) -> Result<(), String> {
    let doc = ModelJson {
        d: gates.dim(),
        k: gates.width(),
        gate_source: gates.source().as_str().into(),
        seed: gates.seed(),
        gates: row_major(gates.gates()),
        weights: row_major(&params.weights),
        alpha: params.alpha.iter().cloned().collect(),
        normalized,
    };
    let text = serde_json::to_string(&doc).map_err(|e| e.to_string())?;
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

pub fn load_model(path: &Path) -> Result<(GateBank, NaturalParams, bool), String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let doc: ModelJson = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    if doc.gates.len() != doc.d * doc.k || doc.weights.len() != doc.d * doc.k {
        return Err("gate/weight array length does not match d*k".into());
    }
    if doc.alpha.len() != doc.k {
        return Err("alpha length does not match k".into());
    }
    let source = match doc.gate_source.as_str() {
        "gaussian" => GateSource::Gaussian,
        "sphere" => GateSource::Sphere,
        other => return Err(format!("unknown gate source {other}")),
    };
    let gates = DMatrix::from_row_slice(doc.d, doc.k, &doc.gates);
    let weights = DMatrix::from_row_slice(doc.d, doc.k, &doc.weights);
    let bank = GateBank::from_matrix(gates, source, doc.seed).map_err(|e| e.to_string())?;
    let params =
        NaturalParams::new(weights, DVector::from_vec(doc.alpha)).map_err(|e| e.to_string())?;
    Ok((bank, params, doc.normalized))
}

#[cfg(test)]
mod tests {
    use super::*;
    use galu_core::network::galu_forward;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn round_trip_preserves_forward_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 6;
        let k = 4;
        let gates = GateBank::generate(d, k, GateSource::Gaussian, 11);
        let params = NaturalParams::new(
            DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal)),
            DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal)),
        )
        .unwrap();
        let dir = std::env::temp_dir().join("galu-model-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        save_model(&path, &gates, &params, true).unwrap();
        let (gates2, params2, normalized) = load_model(&path).unwrap();
        assert!(normalized);
        for _ in 0..20 {
            let x = DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let a = galu_forward(&x, &params, &gates, true).unwrap();
            let b = galu_forward(&x, &params2, &gates2, true).unwrap();
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }
}
