//! Grid demos for the browser. Every export takes plain numbers and returns a
//! JSON string the page draws from; vertex `r * cols + c` sits at row `r`,
//! column `c`.

use serde_json::json;
use wasm_bindgen::prelude::*;

use ustree_core::ca_doubling::{check_preconditions, solve_doubling, DoublingParams};
use ustree_core::ca_general::{solve_general, DEFAULT_ROUNDS_FACTOR};
use ustree_core::dangling_net::{default_tau, sample_net};
use ustree_core::hierarchy::{build_hierarchy, HierarchyParams, SolverKind};
use ustree_core::instances::{gen_grid_weighted, gen_net_partition, random_portals};
use ustree_core::verify::{check_assignment, check_net};
use ustree_core::{ClusterAggInstance, Error};

fn js(e: Error) -> String {
    e.to_string()
}

fn dims(rows: usize, cols: usize) -> Result<(), String> {
    if rows == 0 || cols == 0 || rows * cols > 4096 {
        return Err("grid must have between 1 and 4096 vertices".into());
    }
    Ok(())
}

/// Aggregates a Voronoi partition of a weighted grid onto random portals.
/// `solver` is "general" or "doubling" (the latter uses a greedy Λ-net of
/// portals instead of `portals` random ones).
pub fn aggregate_grid_json(
    rows: usize,
    cols: usize,
    max_weight: u32,
    delta: f64,
    portals: usize,
    solver: &str,
    seed: u64,
) -> Result<String, String> {
    dims(rows, cols)?;
    let g = gen_grid_weighted(rows, cols, max_weight.max(1), seed);
    let part = gen_net_partition(&g, delta, seed ^ 0x5eed);
    let (inst, asg, bound) = match solver {
        "general" => {
            let inst = ClusterAggInstance::new(g, part, random_portals(rows * cols, portals.max(1), seed ^ 0xa11))
                .map_err(js)?;
            let (asg, _) = solve_general(&inst, seed, DEFAULT_ROUNDS_FACTOR).map_err(js)?;
            let bound = 80.0 * (inst.partition.len().max(2) as f64).log2() * delta;
            (inst, asg, bound)
        }
        "doubling" => {
            let params = DoublingParams::new(2.0, delta);
            let order: Vec<usize> = (0..g.n()).collect();
            let net = ustree_core::instances::greedy_net(&g, params.lambda, &order);
            let inst = ClusterAggInstance::new(g, part, net.into()).map_err(js)?;
            check_preconditions(&inst, &params).map_err(js)?;
            let run = solve_doubling(&inst, &params, seed).map_err(js)?;
            (inst, run.assignment, params.detour_bound())
        }
        other => return Err(format!("unknown solver {other}")),
    };
    let rep = check_assignment(&inst, &asg);
    let out = json!({
        "rows": rows,
        "cols": cols,
        "cluster": inst.partition.cluster_index(),
        "portal_of_vertex": asg.vertex_portals(&inst.partition),
        "portals": inst.portals,
        "detour": rep.vertex_detour,
        "max_detour": rep.max_detour,
        "realized_beta": rep.realized_beta,
        "bound": bound,
        "valid": rep.valid,
    });
    Ok(out.to_string())
}

/// Samples a dangling net on a unit grid with α = log₂ n and τ = 4⌈log₂ n⌉.
pub fn net_grid_json(rows: usize, cols: usize, delta: f64, seed: u64) -> Result<String, String> {
    dims(rows, cols)?;
    let n = rows * cols;
    let g = gen_grid_weighted(rows, cols, 1, 0);
    let s = sample_net(&g, delta, (n.max(2) as f64).log2(), default_tau(n), seed, 5).map_err(js)?;
    let rep = check_net(&s.graph, &s.net);
    let out = json!({
        "rows": rows,
        "cols": cols,
        "anchors": s.net.anchors(),
        "shifts": s.net.shifts,
        "covering_radius": rep.covering_radius,
        "max_count": rep.max_count,
        "argmax": rep.argmax,
        "tau": s.net.tau_target,
        "retries": s.retries,
        "ok": rep.ok,
    });
    Ok(out.to_string())
}

/// Builds a hierarchy on a unit grid with the general solver. `alpha` and
/// `beta` of zero select the defaults; smaller values give more levels, and
/// then net sparsity is only measured, not enforced.
pub fn hierarchy_grid_json(rows: usize, cols: usize, alpha: f64, beta: f64, seed: u64) -> Result<String, String> {
    dims(rows, cols)?;
    let n = rows * cols;
    let g = gen_grid_weighted(rows, cols, 1, 0);
    let mut params = HierarchyParams::general(n);
    if alpha > 0.0 || beta > 0.0 {
        let a = if alpha > 0.0 { alpha } else { params.alpha };
        let b = if beta > 0.0 { beta } else { params.beta };
        params = HierarchyParams::new(a, b, usize::MAX, SolverKind::General);
    }
    let h = build_hierarchy(&g, &params, None, seed).map_err(js)?;
    let levels: Vec<_> = h
        .levels
        .iter()
        .map(|l| {
            let mut owner = vec![0usize; n];
            for (c, set) in l.clusters.iter().enumerate() {
                for &v in set.iter() {
                    owner[v] = c;
                }
            }
            json!({
                "cluster": owner,
                "count": l.clusters.len(),
                "max_diameter": l.audit.max_diameter,
                "net_sparsity": l.net.as_ref().map(|s| s.max_count),
            })
        })
        .collect();
    let out = json!({ "rows": rows, "cols": cols, "gamma": params.gamma, "levels": levels });
    Ok(out.to_string())
}

#[wasm_bindgen]
pub fn aggregate_grid(
    rows: usize,
    cols: usize,
    max_weight: u32,
    delta: f64,
    portals: usize,
    solver: &str,
    seed: u64,
) -> Result<String, JsValue> {
    aggregate_grid_json(rows, cols, max_weight, delta, portals, solver, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn net_grid(rows: usize, cols: usize, delta: f64, seed: u64) -> Result<String, JsValue> {
    net_grid_json(rows, cols, delta, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn hierarchy_grid(rows: usize, cols: usize, alpha: f64, beta: f64, seed: u64) -> Result<String, JsValue> {
    hierarchy_grid_json(rows, cols, alpha, beta, seed).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exports_return_json() {
        let a: serde_json::Value =
            serde_json::from_str(&aggregate_grid_json(6, 6, 3, 3.0, 3, "general", 1).unwrap()).unwrap();
        assert_eq!(a["valid"], true);
        assert_eq!(a["cluster"].as_array().unwrap().len(), 36);
        let d: serde_json::Value =
            serde_json::from_str(&aggregate_grid_json(12, 12, 1, 2.0, 0, "doubling", 2).unwrap()).unwrap();
        assert_eq!(d["valid"], true);
        let n: serde_json::Value = serde_json::from_str(&net_grid_json(8, 8, 4.0, 3).unwrap()).unwrap();
        assert_eq!(n["ok"], true);
        let h: serde_json::Value = serde_json::from_str(&hierarchy_grid_json(6, 6, 1.0, 20.0, 4).unwrap()).unwrap();
        assert_eq!(h["levels"].as_array().unwrap().last().unwrap()["count"], 1);
    }
}
