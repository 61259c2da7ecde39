//! MATPOWER `.m` case-file parser.
//!
//! Handles the version-2 case format: `baseMVA`, `bus` (13 columns),
//! `gen` (>= 10 columns), `branch` (13 columns), and optional polynomial
//! `gencost` (model 2, up to quadratic). Loads are bus rows with nonzero
//! Pd/Qd; shunts are bus rows with nonzero Gs/Bs.

use crate::case::{Branch, Bus, BusType, CaseError, Generator, GridCase, Load, Shunt};

/// A numeric matrix with the source line of each row, for error reporting.
struct RawMatrix {
    rows: Vec<Vec<f64>>,
    row_lines: Vec<usize>,
}

#[derive(Default)]
struct RawCase {
    name: String,
    base_mva: Option<f64>,
    bus: Option<RawMatrix>,
    gen: Option<RawMatrix>,
    branch: Option<RawMatrix>,
    gencost: Option<RawMatrix>,
}

/// Parses a MATPOWER case function body into a [`GridCase`].
pub fn parse_matpower_case(text: &str) -> Result<GridCase, CaseError> {
    let raw = scan(text)?;
    convert(raw)
}

fn syntax(line: usize, message: impl Into<String>) -> CaseError {
    CaseError::Syntax { line, message: message.into() }
}

/// Strips `%` comments; lines are 1-based for reporting.
fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn scan(text: &str) -> Result<RawCase, CaseError> {
    let mut raw = RawCase::default();
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let lineno = i + 1;
        let line = strip_comment(lines[i]).trim();
        if line.is_empty() {
            i += 1;
            continue;
        }
        if let Some(rest) = line.strip_prefix("function") {
            // `function mpc = case14`
            raw.name = rest.split('=').nth(1).unwrap_or("").trim().to_string();
            i += 1;
            continue;
        }
        let Some((field, rhs)) = split_assignment(line) else {
            i += 1;
            continue;
        };
        if rhs.trim_start().starts_with('[') {
            let (matrix, next) = scan_matrix(&lines, i, rhs)?;
            match field.as_str() {
                "bus" => raw.bus = Some(matrix),
                "gen" => raw.gen = Some(matrix),
                "branch" => raw.branch = Some(matrix),
                "gencost" => raw.gencost = Some(matrix),
                _ => {}
            }
            i = next;
        } else {
            if field == "baseMVA" {
                let value = rhs.trim().trim_end_matches(';').trim();
                let v = value
                    .parse::<f64>()
                    .map_err(|_| syntax(lineno, format!("invalid baseMVA value '{value}'")))?;
                raw.base_mva = Some(v);
            }
            i += 1;
        }
    }
    Ok(raw)
}

/// Splits `mpc.field = rhs` into (field, rhs).
fn split_assignment(line: &str) -> Option<(String, &str)> {
    let eq = line.find('=')?;
    let lhs = line[..eq].trim();
    let rhs = &line[eq + 1..];
    let field = lhs.rsplit('.').next()?.trim();
    if field.is_empty() || !lhs.contains('.') {
        return None;
    }
    Some((field.to_string(), rhs))
}

/// Scans a `[ ... ];` matrix starting on line `start` (0-based); returns the
/// matrix and the index of the line after it. Rows are terminated by `;`;
/// a row left open at the end of a line continues on the next.
fn scan_matrix(lines: &[&str], start: usize, first_rhs: &str) -> Result<(RawMatrix, usize), CaseError> {
    let open_line = start + 1;
    let mut rows = Vec::new();
    let mut row_lines = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let mut current_line = open_line;
    let mut i = start;
    let mut chunk = first_rhs.trim_start();
    debug_assert!(chunk.starts_with('['));
    chunk = &chunk[1..];

    loop {
        let lineno = i + 1;
        let body = strip_comment(chunk);
        let (content, closed) = match body.find(']') {
            Some(pos) => (&body[..pos], true),
            None => (body, false),
        };

        let mut segments = content.split(';').peekable();
        while let Some(seg) = segments.next() {
            let is_last = segments.peek().is_none();
            for tok in seg.split([' ', '\t', ',']) {
                if tok.is_empty() {
                    continue;
                }
                let v = tok
                    .parse::<f64>()
                    .map_err(|_| syntax(lineno, format!("invalid number '{tok}' in matrix row")))?;
                if current.is_empty() {
                    current_line = lineno;
                }
                current.push(v);
            }
            // Every ';' inside the content terminates a row.
            if !is_last && !current.is_empty() {
                rows.push(std::mem::take(&mut current));
                row_lines.push(current_line);
            }
        }

        if closed {
            if !current.is_empty() {
                rows.push(std::mem::take(&mut current));
                row_lines.push(current_line);
            }
            return Ok((RawMatrix { rows, row_lines }, i + 1));
        }
        i += 1;
        if i >= lines.len() {
            return Err(syntax(open_line, "unterminated matrix: missing closing bracket".to_string()));
        }
        chunk = lines[i];
    }
}

fn need_cols(m: &RawMatrix, what: &str, min: usize) -> Result<(), CaseError> {
    for (row, &line) in m.rows.iter().zip(&m.row_lines) {
        if row.len() < min {
            return Err(syntax(line, format!("{what} row has {} columns, expected >= {min}", row.len())));
        }
    }
    Ok(())
}

fn convert(raw: RawCase) -> Result<GridCase, CaseError> {
    let base_mva = raw
        .base_mva
        .ok_or_else(|| CaseError::Semantic("missing baseMVA".into()))?;
    let bus = raw.bus.ok_or_else(|| CaseError::Semantic("missing bus matrix".into()))?;
    let gen = raw.gen.ok_or_else(|| CaseError::Semantic("missing gen matrix".into()))?;
    let branch = raw
        .branch
        .ok_or_else(|| CaseError::Semantic("missing branch matrix".into()))?;
    need_cols(&bus, "bus", 13)?;
    need_cols(&gen, "gen", 10)?;
    need_cols(&branch, "branch", 13)?;

    let mut case = GridCase { name: raw.name, base_mva, ..Default::default() };

    for (row, &line) in bus.rows.iter().zip(&bus.row_lines) {
        let id = row[0] as u32;
        let bus_type = BusType::from_code(row[1] as i64)
            .ok_or_else(|| syntax(line, format!("bus {id}: invalid bus type {}", row[1])))?;
        case.buses.push(Bus {
            id,
            bus_type,
            base_kv: row[9],
            vmax: row[11],
            vmin: row[12],
        });
        if row[2] != 0.0 || row[3] != 0.0 {
            case.loads.push(Load { bus: id, pd: row[2], qd: row[3] });
        }
        if row[4] != 0.0 || row[5] != 0.0 {
            case.shunts.push(Shunt { bus: id, gs: row[4], bs: row[5] });
        }
    }

    let costs: Option<Vec<[f64; 3]>> = match &raw.gencost {
        None => None,
        Some(gc) => {
            if gc.rows.len() != gen.rows.len() {
                return Err(CaseError::Semantic(format!(
                    "gencost has {} rows but gen has {}",
                    gc.rows.len(),
                    gen.rows.len()
                )));
            }
            let mut out = Vec::with_capacity(gc.rows.len());
            for (row, &line) in gc.rows.iter().zip(&gc.row_lines) {
                if row.len() < 4 {
                    return Err(syntax(line, "gencost row has fewer than 4 columns".to_string()));
                }
                let model = row[0] as i64;
                if model != 2 {
                    return Err(CaseError::Semantic(format!(
                        "gencost model {model} unsupported; only polynomial model 2"
                    )));
                }
                let n = row[3] as usize;
                if row.len() < 4 + n {
                    return Err(syntax(line, format!("gencost row declares {n} coefficients but carries {}", row.len() - 4)));
                }
                if n > 3 {
                    return Err(CaseError::Semantic(format!(
                        "gencost polynomial degree {} unsupported; at most quadratic",
                        n.saturating_sub(1)
                    )));
                }
                // Coefficients are highest order first; pad to (c2, c1, c0).
                let mut c = [0.0f64; 3];
                for (k, &v) in row[4..4 + n].iter().enumerate() {
                    c[3 - n + k] = v;
                }
                out.push(c);
            }
            Some(out)
        }
    };

    for (i, row) in gen.rows.iter().enumerate() {
        case.generators.push(Generator {
            bus: row[0] as u32,
            pg: row[1],
            qg: row[2],
            qmax: row[3],
            qmin: row[4],
            vg: row[5],
            mbase: row[6],
            status: row[7] != 0.0,
            pmax: row[8],
            pmin: row[9],
            cost: costs.as_ref().map(|c| c[i]).unwrap_or([0.0; 3]),
        });
    }

    for row in &branch.rows {
        case.branches.push(Branch {
            from: row[0] as u32,
            to: row[1] as u32,
            r: row[2],
            x: row[3],
            b: row[4],
            rate_a: row[5],
            rate_b: row[6],
            rate_c: row[7],
            tap: row[8],
            shift: row[9],
            status: row[10] != 0.0,
            angmin: row[11],
            angmax: row[12],
        });
    }

    case.validate()?;
    Ok(case)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::{CASE14, CASE30};

    #[test]
    fn case14_counts() {
        let case = parse_matpower_case(CASE14).unwrap();
        assert_eq!(case.name, "case14");
        assert_eq!(case.base_mva, 100.0);
        assert_eq!(case.buses.len(), 14);
        assert_eq!(case.generators.len(), 5);
        assert_eq!(case.branches.len(), 20);
        assert_eq!(case.loads.len(), 11);
        assert_eq!(case.shunts.len(), 1);
        assert_eq!(case.generators[0].cost, [0.0430292599, 20.0, 0.0]);
    }

    #[test]
    fn case30_counts() {
        let case = parse_matpower_case(CASE30).unwrap();
        assert_eq!(case.buses.len(), 30);
        assert_eq!(case.generators.len(), 6);
        assert_eq!(case.branches.len(), 41);
        assert_eq!(case.shunts.len(), 2);
        assert_eq!(case.branches.iter().filter(|b| b.is_transformer()).count(), 4);
    }

    #[test]
    fn transformer_classification_boundary() {
        let mk = |tap: f64| {
            format!(
                "function mpc = t\nmpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 100 1 1.1 0.9;\n2 1 10 0 0 0 1 1 0 100 1 1.1 0.9;\n];\nmpc.gen = [\n1 10 0 99 -99 1 100 1 100 0;\n];\nmpc.branch = [\n1 2 0.01 0.1 0 0 0 0 {tap} 0 1 -360 360;\n];\n"
            )
        };
        let with_tap = parse_matpower_case(&mk(1.0)).unwrap();
        assert!(with_tap.branches[0].is_transformer());
        let plain = parse_matpower_case(&mk(0.0)).unwrap();
        assert!(!plain.branches[0].is_transformer());
    }

    #[test]
    fn truncated_matrix_reports_line() {
        let text = "function mpc = t\nmpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 100 1 1.1 0.9;\n";
        match parse_matpower_case(text) {
            Err(CaseError::Syntax { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("closing bracket"), "{message}");
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn bad_token_reports_line() {
        let text = "function mpc = t\nmpc.baseMVA = 100;\nmpc.bus = [\n1 3 oops 0 0 0 1 1 0 100 1 1.1 0.9;\n];\nmpc.gen = [\n1 10 0 99 -99 1 100 1 100 0;\n];\nmpc.branch = [\n];\n";
        match parse_matpower_case(text) {
            Err(CaseError::Syntax { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn gencost_row_mismatch_is_semantic_error() {
        let text = "function mpc = t\nmpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 100 1 1.1 0.9;\n2 1 5 1 0 0 1 1 0 100 1 1.1 0.9;\n];\nmpc.gen = [\n1 10 0 99 -99 1 100 1 100 0;\n];\nmpc.branch = [\n1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360;\n];\nmpc.gencost = [\n2 0 0 3 0.1 1 0;\n2 0 0 3 0.1 1 0;\n];\n";
        assert!(matches!(parse_matpower_case(text), Err(CaseError::Semantic(_))));
    }

    #[test]
    fn piecewise_cost_model_is_rejected() {
        let text = "function mpc = t\nmpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 100 1 1.1 0.9;\n2 1 5 1 0 0 1 1 0 100 1 1.1 0.9;\n];\nmpc.gen = [\n1 10 0 99 -99 1 100 1 100 0;\n];\nmpc.branch = [\n1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360;\n];\nmpc.gencost = [\n1 0 0 2 0 0 10 100;\n];\n";
        assert!(matches!(parse_matpower_case(text), Err(CaseError::Semantic(_))));
    }

    #[test]
    fn no_reference_bus_is_semantic_error() {
        let text = "function mpc = t\nmpc.baseMVA = 100;\nmpc.bus = [\n1 1 0 0 0 0 1 1 0 100 1 1.1 0.9;\n];\nmpc.gen = [\n1 10 0 99 -99 1 100 1 100 0;\n];\nmpc.branch = [\n];\n";
        assert!(matches!(parse_matpower_case(text), Err(CaseError::Semantic(_))));
    }
}
