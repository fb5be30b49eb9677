//! WebAssembly bindings for the browser demo. Every entry point takes plain
//! numbers and returns a JSON string, so the page needs no glue beyond
//! `JSON.parse`.

use pibp_core::experiments::make_sim1_truth;
use pibp_core::model::{feature_similarity, generate_data, similarity_error, GroupPartition, NoiseParams};
use pibp_core::prior::sample_prior_matrix;
use pibp_core::sampler::{run_chain, select_map_sample, SamplerConfig};
use pibp_core::tree::{group_tree, two_group_tree};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct PriorDraw {
    groups: Vec<usize>,
    rows: Vec<Vec<u8>>,
    k: usize,
}

/// One prior draw of `Z` on a tree with `groups` groups of `per_group` samples.
pub fn prior_draw_json(groups: usize, per_group: usize, eta: f64, alpha: f64, seed: u64) -> Result<String, String> {
    let labels: Vec<usize> = (0..groups * per_group).map(|i| i / per_group.max(1)).collect();
    let tree = group_tree(&labels, eta).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = sample_prior_matrix(&tree, alpha, &mut rng).map_err(|e| e.to_string())?;
    let out = PriorDraw { groups: labels, rows: z.to_rows(), k: z.k() };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

#[derive(Serialize)]
struct Cooccurrence {
    eta: f64,
    within: f64,
    across: f64,
}

/// Monte-Carlo probability that two samples share at least one feature, for
/// a pair inside one group and a pair split across the two groups.
pub fn cooccurrence_json(etas: &[f64], alpha: f64, draws: u32, seed: u64) -> Result<String, String> {
    let partition = GroupPartition::halves(4);
    let mut rows = Vec::with_capacity(etas.len());
    for (idx, &eta) in etas.iter().enumerate() {
        let tree = two_group_tree(4, eta, &partition).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((idx as u64) << 32));
        let (mut within, mut across) = (0u32, 0u32);
        for _ in 0..draws {
            let s = feature_similarity(&sample_prior_matrix(&tree, alpha, &mut rng).map_err(|e| e.to_string())?);
            within += u32::from(s.get(0, 1) > 0);
            across += u32::from(s.get(0, 2) > 0);
        }
        let d = f64::from(draws.max(1));
        rows.push(Cooccurrence { eta, within: f64::from(within) / d, across: f64::from(across) / d });
    }
    Ok(serde_json::to_string(&rows).expect("serializable"))
}

#[derive(Serialize)]
struct FitResult {
    truth: Vec<Vec<u8>>,
    map: Vec<Vec<u8>>,
    k_plus: Vec<usize>,
    log_posterior: Vec<f64>,
    error: f64,
}

/// Simulates the eight-group design and fits it with the flat tree
/// (`eta` = 0) or the group tree.
pub fn fit_demo_json(n: usize, p: usize, steps: usize, eta: f64, seed: u64) -> Result<String, String> {
    let (z0, labels) = make_sim1_truth(n).map_err(|e| e.to_string())?;
    let params = NoiseParams::new(1.0, 0.5).map_err(|e| e.to_string())?;
    let x = generate_data(&z0, params, p, seed).map_err(|e| e.to_string())?;
    let tree = group_tree(&labels, eta).map_err(|e| e.to_string())?;
    let config = SamplerConfig { iterations: steps, burn_in: steps / 2, seed: seed.wrapping_add(1), ..Default::default() };
    let run = run_chain(&x, &tree, &config).map_err(|e| e.to_string())?;
    let map = select_map_sample(&run.samples).map_err(|e| e.to_string())?;
    let out = FitResult {
        truth: z0.to_rows(),
        map: map.z.canonical().to_rows(),
        k_plus: run.trace.iter().map(|t| t.k_plus).collect(),
        log_posterior: run.trace.iter().map(|t| t.log_posterior).collect(),
        error: similarity_error(&map.z, &z0).map_err(|e| e.to_string())?,
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

#[wasm_bindgen]
pub fn prior_draw(groups: usize, per_group: usize, eta: f64, alpha: f64, seed: u32) -> Result<String, JsError> {
    prior_draw_json(groups, per_group, eta, alpha, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn cooccurrence(etas: &[f64], alpha: f64, draws: u32, seed: u32) -> Result<String, JsError> {
    cooccurrence_json(etas, alpha, draws, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn fit_demo(n: usize, p: usize, steps: usize, eta: f64, seed: u32) -> Result<String, JsError> {
    fit_demo_json(n, p, steps, eta, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_draw_has_one_row_per_sample() {
        let v: serde_json::Value = serde_json::from_str(&prior_draw_json(3, 4, 0.8, 2.0, 1).unwrap()).unwrap();
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 12);
        assert!(rows.iter().all(|r| r.as_array().unwrap().len() == v["k"].as_u64().unwrap() as usize));
        assert!(prior_draw_json(2, 2, 1.5, 1.0, 1).is_err());
    }

    #[test]
    fn deeper_groups_share_more_within() {
        let v: serde_json::Value = serde_json::from_str(&cooccurrence_json(&[0.0, 0.9], 1.0, 4000, 3).unwrap()).unwrap();
        let flat = &v[0];
        let deep = &v[1];
        assert!((flat["within"].as_f64().unwrap() - flat["across"].as_f64().unwrap()).abs() < 0.04);
        assert!(deep["within"].as_f64().unwrap() > deep["across"].as_f64().unwrap() + 0.1);
    }

    #[test]
    fn fit_demo_reports_a_finite_error() {
        let v: serde_json::Value = serde_json::from_str(&fit_demo_json(16, 8, 20, 0.8, 2).unwrap()).unwrap();
        assert_eq!(v["truth"].as_array().unwrap().len(), 16);
        assert_eq!(v["k_plus"].as_array().unwrap().len(), 20);
        assert!(v["error"].as_f64().unwrap() >= 0.0);
        assert!(fit_demo_json(12, 8, 20, 0.0, 2).is_err());
    }
}
