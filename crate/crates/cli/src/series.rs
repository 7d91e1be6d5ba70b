//! `series.csv`: one row per diagnostics sample.

use std::fmt::Write as _;
use std::path::Path;

use kinfluid::DiagnosticsRow;

#[derive(Debug, thiserror::Error)]
pub enum SeriesError {
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
}

fn q_label(q: f64) -> String {
    if q.is_infinite() {
        "rho_Linf".into()
    } else if q.fract() == 0.0 {
        format!("rho_L{}", q as i64)
    } else {
        format!("rho_L{q}")
    }
}

fn parse_q_label(label: &str) -> Option<f64> {
    let rest = label.strip_prefix("rho_L")?;
    if rest == "inf" {
        Some(f64::INFINITY)
    } else {
        rest.parse().ok()
    }
}

pub fn header(dim: usize, qs: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = ["t", "E_tot", "E_mod", "D", "D_visc", "D_drag"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for prefix in ["u_c", "v_c"] {
        for a in 1..=dim {
            h.push(format!("{prefix}_{a}"));
        }
    }
    h.push("mass".into());
    for a in 1..=dim {
        h.push(format!("P_{a}"));
    }
    h.extend(qs.iter().map(|&q| q_label(q)));
    h
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV text with 17 significant digits per value.
pub fn to_csv(rows: &[DiagnosticsRow], dim: usize, qs: &[f64]) -> String {
    let mut out = header(dim, qs).join(",");
    out.push('\n');
    for r in rows {
        let mut fields = vec![fmt(r.t), fmt(r.e_tot), fmt(r.e_mod), fmt(r.d), fmt(r.d_visc), fmt(r.d_drag)];
        fields.extend(r.u_c[..dim].iter().map(|&v| fmt(v)));
        fields.extend(r.v_c[..dim].iter().map(|&v| fmt(v)));
        fields.push(fmt(r.mass));
        fields.extend(r.momentum[..dim].iter().map(|&v| fmt(v)));
        fields.extend(r.rho_norms.iter().map(|&(_, v)| fmt(v)));
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

pub fn read_csv(path: &Path) -> Result<Vec<DiagnosticsRow>, SeriesError> {
    let text = std::fs::read_to_string(path).map_err(|e| SeriesError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_csv(&text)
}

/// Parses a series; the dimension is inferred from the `u_c_*` columns.
pub fn parse_csv(text: &str) -> Result<Vec<DiagnosticsRow>, SeriesError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let head: Vec<String> = rdr
        .headers()
        .map_err(|e| SeriesError::Malformed {
            line: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let dim = head.iter().filter(|h| h.starts_with("u_c_")).count();
    if dim != 2 && dim != 3 {
        return Err(SeriesError::Malformed {
            line: 1,
            msg: format!("expected 2 or 3 u_c columns, found {dim}"),
        });
    }
    let qs: Vec<f64> = head.iter().filter_map(|h| parse_q_label(h)).collect();
    let expected = header(dim, &qs);
    if head != expected {
        return Err(SeriesError::Malformed {
            line: 1,
            msg: format!("header does not match the schema, expected `{}`", expected.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| SeriesError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let vals: Vec<f64> = rec
            .iter()
            .zip(&head)
            .map(|(s, name)| {
                s.trim().parse::<f64>().map_err(|_| SeriesError::Malformed {
                    line,
                    msg: format!("column {name}: invalid number `{s}`"),
                })
            })
            .collect::<Result<_, _>>()?;
        let mut it = vals.into_iter();
        let mut next = || it.next().unwrap();
        let (t, e_tot, e_mod, d, d_visc, d_drag) = (next(), next(), next(), next(), next(), next());
        let mut u_c = [0.0; 3];
        let mut v_c = [0.0; 3];
        let mut momentum = [0.0; 3];
        u_c.iter_mut().take(dim).for_each(|v| *v = next());
        v_c.iter_mut().take(dim).for_each(|v| *v = next());
        let mass = next();
        momentum.iter_mut().take(dim).for_each(|v| *v = next());
        let rho_norms = qs.iter().map(|&q| (q, next())).collect();
        rows.push(DiagnosticsRow {
            dim,
            t,
            e_tot,
            e_mod,
            d,
            d_visc,
            d_drag,
            u_c,
            v_c,
            mass,
            momentum,
            rho_norms,
            max_moment: f64::NAN,
        });
    }
    Ok(rows)
}
