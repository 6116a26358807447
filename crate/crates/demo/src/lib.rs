//! WebAssembly bindings behind the static demo page in `www/`.
//!
//! Every export takes and returns JSON strings so the page needs no glue
//! beyond `JSON.parse`.

use auctionlab::example::summary_table;
use auctionlab::solvers::SolverOptions;
use auctionlab::transforms::lift;
use auctionlab::{Evaluator, MechanismKind, MechanismSpec, QuadratureConfig, QuantileFunction, Scenario};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Quadrature nodes used by the page; coarser than the library default to
/// keep sliders responsive.
const DEMO_NODES: usize = 1024;

#[derive(Serialize)]
struct Curves {
    q: Vec<f64>,
    bid: Vec<f64>,
    #[serde(rename = "virtual")]
    virtual_bid: Vec<f64>,
    lifted: Option<Vec<f64>>,
    lift_error: Option<String>,
}

#[derive(Serialize)]
struct PaymentCurve {
    theta: Vec<f64>,
    payment: Vec<f64>,
    win_probability: Vec<f64>,
    budget: f64,
}

fn grid(points: usize) -> Vec<f64> {
    let m = points.max(2) - 1;
    (0..=m).map(|k| k as f64 / m as f64).collect()
}

fn json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

/// The benchmark summary table, solved from scratch.
pub fn example_table_json() -> Result<String, String> {
    let table = summary_table(&SolverOptions::default()).map_err(|e| e.to_string())?;
    json(&table)
}

/// Bid, virtual bid and lifted virtual bid of a quantile function on a grid.
pub fn quantile_curves_json(qf: &str, lambda: f64, points: usize) -> Result<String, String> {
    let qf: QuantileFunction = serde_json::from_str(qf).map_err(|e| e.to_string())?;
    qf.validate().map_err(|e| e.to_string())?;
    let q = grid(points);
    let psi = qf.virtualize().into_quantile_function();
    let (lifted, lift_error) = match lift(&psi, lambda) {
        Ok(f) => (Some(q.iter().map(|&x| f.at(x)).collect()), None),
        Err(e) => (None, Some(e.to_string())),
    };
    json(&Curves {
        bid: q.iter().map(|&x| qf.at(x)).collect(),
        virtual_bid: q.iter().map(|&x| psi.at(x)).collect(),
        lifted,
        lift_error,
        q,
    })
}

/// Expected payment of `buyer` as its own multiplier sweeps `[0, 1]`, with
/// every other buyer held at `others`.
pub fn payment_curve_json(scenario: &str, mechanism: &str, others: f64, buyer: usize, points: usize) -> Result<String, String> {
    let scenario: Scenario = serde_json::from_str(scenario).map_err(|e| e.to_string())?;
    scenario.validate().map_err(|e| e.to_string())?;
    let kind: MechanismKind = mechanism.parse().map_err(|e: auctionlab::Error| e.to_string())?;
    if buyer >= scenario.n() {
        return Err(format!("buyer {buyer} out of range for {} buyers", scenario.n()));
    }
    let quad = QuadratureConfig::with_nodes(DEMO_NODES);
    let theta = grid(points);
    let mut payment = Vec::with_capacity(theta.len());
    let mut win_probability = Vec::with_capacity(theta.len());
    for &t in &theta {
        let mut params = vec![others; scenario.n()];
        params[buyer] = t;
        let ev = Evaluator::new(&MechanismSpec::new(kind, params), &scenario, quad).map_err(|e| e.to_string())?;
        let b = ev.buyer(buyer);
        payment.push(b.payment);
        win_probability.push(b.win_probability);
    }
    json(&PaymentCurve {
        budget: scenario.buyers[buyer].budget,
        theta,
        payment,
        win_probability,
    })
}

#[wasm_bindgen]
pub fn example_table() -> Result<String, JsValue> {
    example_table_json().map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn quantile_curves(qf: &str, lambda: f64, points: usize) -> Result<String, JsValue> {
    quantile_curves_json(qf, lambda, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn payment_curve(scenario: &str, mechanism: &str, others: f64, buyer: usize, points: usize) -> Result<String, JsValue> {
    payment_curve_json(scenario, mechanism, others, buyer, points).map_err(|e| JsValue::from_str(&e))
}
