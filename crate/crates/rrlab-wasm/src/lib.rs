//! Browser bindings for the rank-one laboratory demo page.
//!
//! Three entry points, each returning a JSON string the page renders on a
//! canvas: the tower geometry of a construction stage by stage, the fiber
//! of a joining at a movable point together with its Koopman coefficient
//! profile, and the operator-error convergence sweep over stages.
//!
//! All computation is exact in the core; values are converted to `f64`
//! only for drawing, with exact `"p/q"` strings carried alongside.

use rrlab_core::experiments::{descriptor_from_json, joining_from_json};
use rrlab_core::functions::Observable;
use rrlab_core::joinings::{self, Joining, DEFAULT_DIGITS};
use rrlab_core::metrics;
use rrlab_core::rational::{format_rat, rat, to_f64, Rat};
use rrlab_core::system::{build, BuiltSystem, ConstructionDescriptor};
use rrlab_core::{approx, towers};
use serde_json::json;
use wasm_bindgen::prelude::*;

const DEN_CAP_BITS: u64 = 4096;

fn err(msg: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&msg.to_string())
}

fn load_system(spec: &str, depth: u32) -> Result<BuiltSystem, JsValue> {
    let descriptor = match ConstructionDescriptor::builtin(spec, depth) {
        Some(d) => d,
        None => descriptor_from_json(spec).map_err(err)?,
    };
    let depth = depth.min(descriptor.max_stage);
    build(&descriptor, depth, DEN_CAP_BITS).map_err(err)
}

fn load_joining(spec: &str) -> Result<Joining, JsValue> {
    match Joining::builtin(spec) {
        Some(j) => Ok(j),
        None => joining_from_json(spec).map_err(err),
    }
}

/// Tower geometry for stages `0..=depth`: per stage the level rectangles in
/// tower order, so the page can draw the stacked column picture.
#[wasm_bindgen]
pub fn tower_json(system: &str, depth: u32) -> Result<String, JsValue> {
    let sys = load_system(system, depth)?;
    let mut stages = Vec::new();
    for k in 0..=sys.depth() {
        let st = sys.stage(k);
        let levels: Vec<_> = st
            .levels
            .iter()
            .map(|s| json!([to_f64(&s.lo), to_f64(&s.hi)]))
            .collect();
        stages.push(json!({
            "stage": k,
            "height": st.height,
            "level_width": to_f64(&st.level_width()),
            "tower_mass": to_f64(&sys.stage_mass(k)),
            "levels": levels,
        }));
    }
    Ok(json!({
        "name": sys.descriptor.name,
        "depth": sys.depth(),
        "normalization": format_rat(&sys.normalization),
        "stages": stages,
    })
    .to_string())
}

/// Fiber of the joining at `x = x_num / x_den`, snapped into the stage-k
/// tower, with the coefficient profile read at that point.
#[wasm_bindgen]
pub fn fiber_json(
    system: &str,
    depth: u32,
    joining: &str,
    stage: u32,
    x_num: u32,
    x_den: u32,
) -> Result<String, JsValue> {
    if x_den == 0 || x_num >= x_den {
        return Err(err("x must be a fraction inside [0, 1)"));
    }
    let sys = load_system(system, depth)?;
    let j = load_joining(joining)?;
    let stage = stage.min(sys.depth());
    let mut x = rat(x_num as i64, x_den as i64);
    // Snap into the stage tower when the slider lands on spacer territory.
    if sys.stage(stage).level_index(&x).is_none() {
        x = Rat::new(1.into(), 2.into()) * sys.stage_mass(stage);
    }
    let fiber = joinings::disintegrate(&j, &sys, &x).map_err(err)?;
    let profile = approx::coefficients_at(&j, &sys, stage, &x).map_err(err)?;
    let atoms: Vec<_> = fiber
        .measure
        .atoms()
        .iter()
        .map(
            |(pos, w)| json!({"at": to_f64(pos), "weight": to_f64(w), "at_exact": format_rat(pos)}),
        )
        .collect();
    let density: Vec<_> = fiber
        .measure
        .density()
        .breaks()
        .iter()
        .zip(fiber.measure.density().values())
        .map(|(b, v)| json!([to_f64(b), to_f64(v)]))
        .collect();
    let coefficients: Vec<_> = profile
        .coefficients
        .iter()
        .map(|c| json!(to_f64(c)))
        .collect();
    Ok(json!({
        "x": to_f64(&x),
        "x_exact": format_rat(&x),
        "level": profile.level,
        "joining_id": j.id(),
        "atoms": atoms,
        "density": density,
        "coefficients": coefficients,
        "residual": to_f64(&profile.residual),
    })
    .to_string())
}

/// Convergence sweep: per stage the coefficient mass, the squared operator
/// error against the identity observable, the plane-test error, and the
/// base-point score.
#[wasm_bindgen]
pub fn convergence_json(
    system: &str,
    joining: &str,
    k_min: u32,
    k_max: u32,
) -> Result<String, JsValue> {
    if k_min > k_max || k_max > 10 {
        return Err(err("stage range must satisfy k_min <= k_max <= 10"));
    }
    let depth = k_max + 3;
    let sys = load_system(system, depth)?;
    let j = load_joining(joining)?;
    j.validate_for(&sys).map_err(err)?;
    let eps = rat(1, 4);
    let f = Observable::Linear(rrlab_core::functions::PiecewiseLinear::identity());
    let plane = metrics::plane_test_family(2);
    let mut rows = Vec::new();
    for k in k_min..=k_max {
        if 5 * sys.stage(k).height > sys.final_height() {
            break;
        }
        let (sel, combo) =
            approx::build_combination(&j, &sys, k, &eps, 4, DEFAULT_DIGITS).map_err(err)?;
        let sot = approx::sot_error(&combo, &j, &sys, &f, DEFAULT_DIGITS).map_err(err)?;
        let weak =
            approx::weak_star_error(&combo, &j, &sys, &plane, DEFAULT_DIGITS).map_err(err)?;
        let peak = combo
            .coefficients
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1))
            .map(|(i, c)| json!({"index": i, "value": to_f64(c)}));
        rows.push(json!({
            "k": k,
            "n_k": sys.stage(k).height,
            "sum_c": to_f64(&combo.coefficient_sum()),
            "sot_error_sq": to_f64(&sot),
            "sot_error_sq_exact": format_rat(&sot),
            "weak_star_error": to_f64(&weak),
            "score": to_f64(&sel.score),
            "peak": peak,
        }));
    }
    Ok(json!({
        "system": sys.descriptor.name,
        "joining_id": j.id(),
        "rows": rows,
    })
    .to_string())
}

/// Tower-statistic masses per stage, for the conditions panel.
#[wasm_bindgen]
pub fn conditions_json(system: &str, depth: u32, k_max: u32) -> Result<String, JsValue> {
    let sys = load_system(system, depth)?;
    let k_max = k_max.min(sys.depth().saturating_sub(1));
    let reports = towers::verify_conditions(&sys, 1..=k_max).map_err(err)?;
    let rows: Vec<_> = reports
        .iter()
        .map(|r| {
            let masses = r
                .triple_masses
                .as_ref()
                .map(|(a, b, c)| json!([to_f64(a), to_f64(b), to_f64(c)]));
            json!({
                "k": r.stage,
                "n_k": r.height,
                "tower_mass": to_f64(&r.cond1_mass),
                "return_ratio": to_f64(&r.cond3_ratio),
                "return_ratio_exact": format_rat(&r.cond3_ratio),
                "triple_masses": masses,
            })
        })
        .collect();
    Ok(json!({"system": sys.descriptor.name, "rows": rows}).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tower_json_shape() {
        let text = tower_json("odometer", 3).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["depth"], 3);
        assert_eq!(v["stages"][2]["height"], 4);
    }

    #[test]
    fn fiber_json_runs() {
        let text = fiber_json("odometer", 6, "mix-0-3", 3, 1, 3).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["atoms"].as_array().unwrap().len(), 2);
        assert_eq!(v["coefficients"].as_array().unwrap().len(), 8);
    }

    #[test]
    fn convergence_json_runs() {
        let text = convergence_json("odometer", "twoadic-neg-third", 3, 4).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0]["sum_c"], 1.0);
    }
}
