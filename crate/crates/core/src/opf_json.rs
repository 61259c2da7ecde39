//! OPF-JSON record parser.
//!
//! One JSON object per sample, carrying the same grid components as a
//! MATPOWER case plus an optional solved bus state, so both sources feed
//! [`crate::case::build_hetero_graph`] identically. Schema errors name the
//! offending key path.
//!
//! Record schema (engineering units, degrees; defaults in parentheses):
//!
//! ```json
//! {
//!   "base_mva": 100.0,
//!   "buses":      [{"id": 1, "type": 3, "base_kv": 135.0, "vmin": 0.95, "vmax": 1.05}],
//!   "generators": [{"bus": 1, "pg": 20.0, "qg": 0.0, "qmax": 50.0, "qmin": -20.0,
//!                   "vg": 1.0, "mbase": 100.0 (100), "status": 1 (1),
//!                   "pmax": 80.0, "pmin": 0.0, "cost": [c2, c1, c0] ([0,0,0])}],
//!   "loads":      [{"bus": 2, "pd": 21.7, "qd": 12.7}],
//!   "shunts":     [{"bus": 5, "gs": 0.0, "bs": 0.19}]  (optional, []),
//!   "branches":   [{"from": 1, "to": 2, "r": 0.02, "x": 0.06, "b": 0.03,
//!                   "rate_a": 130.0 (0), "rate_b": 0.0 (0), "rate_c": 0.0 (0),
//!                   "tap": 0.0 (0), "shift": 0.0 (0), "status": 1 (1),
//!                   "angmin": -360.0 (-360), "angmax": 360.0 (360)}],
//!   "solution":   {"va_rad": [...], "vm_pu": [...]}  (optional),
//!   "metadata":   {...}                              (optional, free-form)
//! }
//! ```

use serde_json::Value;

use crate::case::{Branch, Bus, BusType, CaseError, Generator, GridCase, Load, Shunt};
use crate::powerflow::BusState;

fn schema(key: impl Into<String>, message: impl Into<String>) -> CaseError {
    CaseError::Schema { key: key.into(), message: message.into() }
}

fn get<'a>(obj: &'a Value, path: &str, key: &str) -> Result<&'a Value, CaseError> {
    obj.get(key)
        .ok_or_else(|| schema(join(path, key), "missing key"))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn as_f64(v: &Value, key: String) -> Result<f64, CaseError> {
    v.as_f64().ok_or_else(|| schema(key, format!("expected number, got {v}")))
}

fn num(obj: &Value, path: &str, key: &str) -> Result<f64, CaseError> {
    as_f64(get(obj, path, key)?, join(path, key))
}

fn num_or(obj: &Value, path: &str, key: &str, default: f64) -> Result<f64, CaseError> {
    match obj.get(key) {
        None => Ok(default),
        Some(v) => as_f64(v, join(path, key)),
    }
}

fn arr<'a>(obj: &'a Value, path: &str, key: &str) -> Result<&'a Vec<Value>, CaseError> {
    get(obj, path, key)?
        .as_array()
        .ok_or_else(|| schema(join(path, key), "expected array"))
}

/// Parses one OPF-JSON record into a case, optional solved state, and
/// free-form metadata.
pub fn parse_opf_json_record(text: &str) -> Result<(GridCase, Option<BusState>, Value), CaseError> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| schema("", format!("invalid JSON: {e}")))?;
    if !root.is_object() {
        return Err(schema("", "record must be a JSON object"));
    }

    let mut case = GridCase {
        name: root.get("name").and_then(Value::as_str).unwrap_or("opf_json").to_string(),
        base_mva: num(&root, "", "base_mva")?,
        ..Default::default()
    };

    for (i, b) in arr(&root, "", "buses")?.iter().enumerate() {
        let path = format!("buses[{i}]");
        let ty = num(b, &path, "type")? as i64;
        case.buses.push(Bus {
            id: num(b, &path, "id")? as u32,
            bus_type: BusType::from_code(ty)
                .ok_or_else(|| schema(join(&path, "type"), format!("invalid bus type {ty}")))?,
            base_kv: num(b, &path, "base_kv")?,
            vmin: num(b, &path, "vmin")?,
            vmax: num(b, &path, "vmax")?,
        });
    }

    for (i, g) in arr(&root, "", "generators")?.iter().enumerate() {
        let path = format!("generators[{i}]");
        let cost = match g.get("cost") {
            None => [0.0; 3],
            Some(v) => {
                let a = v
                    .as_array()
                    .ok_or_else(|| schema(join(&path, "cost"), "expected [c2, c1, c0]"))?;
                if a.len() != 3 {
                    return Err(schema(join(&path, "cost"), format!("expected 3 coefficients, got {}", a.len())));
                }
                let mut c = [0.0; 3];
                for (k, v) in a.iter().enumerate() {
                    c[k] = as_f64(v, format!("{path}.cost[{k}]"))?;
                }
                c
            }
        };
        case.generators.push(Generator {
            bus: num(g, &path, "bus")? as u32,
            pg: num(g, &path, "pg")?,
            qg: num(g, &path, "qg")?,
            qmax: num(g, &path, "qmax")?,
            qmin: num(g, &path, "qmin")?,
            vg: num(g, &path, "vg")?,
            mbase: num_or(g, &path, "mbase", 100.0)?,
            status: num_or(g, &path, "status", 1.0)? != 0.0,
            pmax: num(g, &path, "pmax")?,
            pmin: num(g, &path, "pmin")?,
            cost,
        });
    }

    for (i, l) in arr(&root, "", "loads")?.iter().enumerate() {
        let path = format!("loads[{i}]");
        case.loads.push(Load {
            bus: num(l, &path, "bus")? as u32,
            pd: num(l, &path, "pd")?,
            qd: num(l, &path, "qd")?,
        });
    }

    if let Some(shunts) = root.get("shunts") {
        let shunts = shunts
            .as_array()
            .ok_or_else(|| schema("shunts", "expected array"))?;
        for (i, s) in shunts.iter().enumerate() {
            let path = format!("shunts[{i}]");
            case.shunts.push(Shunt {
                bus: num(s, &path, "bus")? as u32,
                gs: num(s, &path, "gs")?,
                bs: num(s, &path, "bs")?,
            });
        }
    }

    for (i, br) in arr(&root, "", "branches")?.iter().enumerate() {
        let path = format!("branches[{i}]");
        case.branches.push(Branch {
            from: num(br, &path, "from")? as u32,
            to: num(br, &path, "to")? as u32,
            r: num(br, &path, "r")?,
            x: num(br, &path, "x")?,
            b: num_or(br, &path, "b", 0.0)?,
            rate_a: num_or(br, &path, "rate_a", 0.0)?,
            rate_b: num_or(br, &path, "rate_b", 0.0)?,
            rate_c: num_or(br, &path, "rate_c", 0.0)?,
            tap: num_or(br, &path, "tap", 0.0)?,
            shift: num_or(br, &path, "shift", 0.0)?,
            status: num_or(br, &path, "status", 1.0)? != 0.0,
            angmin: num_or(br, &path, "angmin", -360.0)?,
            angmax: num_or(br, &path, "angmax", 360.0)?,
        });
    }

    case.validate()?;

    let solution = match root.get("solution") {
        None => None,
        Some(sol) => {
            let va = arr(sol, "solution", "va_rad")?;
            let vm = arr(sol, "solution", "vm_pu")?;
            if va.len() != case.buses.len() || vm.len() != case.buses.len() {
                return Err(schema(
                    "solution",
                    format!("expected {} entries per vector", case.buses.len()),
                ));
            }
            let mut state = BusState {
                va: Vec::with_capacity(va.len()),
                vm: Vec::with_capacity(vm.len()),
            };
            for (k, v) in va.iter().enumerate() {
                state.va.push(as_f64(v, format!("solution.va_rad[{k}]"))?);
            }
            for (k, v) in vm.iter().enumerate() {
                state.vm.push(as_f64(v, format!("solution.vm_pu[{k}]"))?);
            }
            Some(state)
        }
    };

    let metadata = root.get("metadata").cloned().unwrap_or(Value::Null);
    Ok((case, solution, metadata))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_record() -> serde_json::Value {
        serde_json::json!({
            "base_mva": 100.0,
            "buses": [
                {"id": 1, "type": 3, "base_kv": 100.0, "vmin": 0.9, "vmax": 1.1},
                {"id": 2, "type": 1, "base_kv": 100.0, "vmin": 0.9, "vmax": 1.1}
            ],
            "generators": [
                {"bus": 1, "pg": 50.0, "qg": 0.0, "qmax": 99.0, "qmin": -99.0,
                 "vg": 1.0, "pmax": 100.0, "pmin": 0.0}
            ],
            "loads": [{"bus": 2, "pd": 50.0, "qd": 0.0}],
            "branches": [{"from": 1, "to": 2, "r": 0.0, "x": 0.1, "b": 0.0}]
        })
    }

    #[test]
    fn minimal_two_bus_record_parses() {
        let (case, solution, meta) = parse_opf_json_record(&minimal_record().to_string()).unwrap();
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.generators.len(), 1);
        assert_eq!(case.loads.len(), 1);
        assert_eq!(case.branches.len(), 1);
        assert!(solution.is_none());
        assert!(meta.is_null());
    }

    #[test]
    fn solution_block_becomes_bus_state() {
        let mut rec = minimal_record();
        rec["solution"] = serde_json::json!({"va_rad": [0.0, -0.05], "vm_pu": [1.0, 0.99]});
        let (_, solution, _) = parse_opf_json_record(&rec.to_string()).unwrap();
        let s = solution.unwrap();
        assert_eq!(s.va, vec![0.0, -0.05]);
        assert_eq!(s.vm, vec![1.0, 0.99]);
    }

    #[test]
    fn wrong_type_names_the_key() {
        let mut rec = minimal_record();
        rec["loads"][0]["pd"] = serde_json::json!("fifty");
        match parse_opf_json_record(&rec.to_string()) {
            Err(CaseError::Schema { key, .. }) => assert_eq!(key, "loads[0].pd"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn missing_key_names_the_key() {
        let mut rec = minimal_record();
        rec["buses"][1].as_object_mut().unwrap().remove("vmax");
        match parse_opf_json_record(&rec.to_string()) {
            Err(CaseError::Schema { key, .. }) => assert_eq!(key, "buses[1].vmax"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn graph_matches_matpower_path_contract() {
        let mut rec = minimal_record();
        rec["solution"] = serde_json::json!({"va_rad": [0.0, -0.05], "vm_pu": [1.0, 0.99]});
        let (case, solution, _) = parse_opf_json_record(&rec.to_string()).unwrap();
        let g = crate::case::build_hetero_graph(&case, solution.as_ref()).unwrap();
        assert!(crate::graph::validate_graph(&g).is_empty());
        assert_eq!(g.bus_target.as_ref().unwrap().shape(), &[2, 2]);
    }
}
