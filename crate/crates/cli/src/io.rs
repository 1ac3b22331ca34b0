use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use wassercalc_core::DiscreteMeasure;

use crate::catalog;
use crate::error::{CliError, CliResult};

pub fn resolve(path: &str, base: Option<&Path>) -> PathBuf {
    let p = PathBuf::from(path);
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    }
}

fn read_text(field: &str, path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::input("io_error", field, format!("{field}: cannot read {}: {e}", path.display())))
}

pub fn read_json_value(field: &str, path: &Path) -> CliResult<Value> {
    let text = read_text(field, path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::input("invalid_json", field, format!("{field}: {}: {e}", path.display())))
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Numeric rows of a CSV file; a non-numeric first row is taken as a header.
pub fn csv_rows(field: &str, path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::input("io_error", field, format!("{field}: cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::input("invalid_csv", field, format!("{field}: {e}")))?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if line == 0 => continue,
            Err(e) => {
                return Err(CliError::input("invalid_csv", field, format!("{field}: row {}: {e}", line + 1)));
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::input("empty_input", field, format!("{field}: no rows in {}", path.display())));
    }
    Ok(rows)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasure {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

fn build_measure(field: &str, dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> CliResult<DiscreteMeasure> {
    DiscreteMeasure::new(dim, points, weights).map_err(|e| {
        let mut err = CliError::core(e, Some(field));
        err.message = format!("{field}: {}", err.message);
        err
    })
}

fn measure_from_value(field: &str, v: Value) -> CliResult<DiscreteMeasure> {
    let raw: RawMeasure =
        serde_json::from_value(v).map_err(|e| CliError::input("invalid_measure", field, format!("{field}: {e}")))?;
    build_measure(field, raw.dim, raw.points, raw.weights)
}

/// JSON `{"dim","points","weights"}` or CSV with the weight in the last column.
pub fn measure(field: &str, path: &Path) -> CliResult<DiscreteMeasure> {
    if is_csv(path) {
        let rows = csv_rows(field, path)?;
        let width = rows[0].len();
        if width < 2 {
            return Err(CliError::input("invalid_csv", field, format!("{field}: need coordinates and a weight column")));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != width) {
            return Err(CliError::input("invalid_csv", field, format!("{field}: row {} has a different width", bad + 1)));
        }
        let (points, weights) = rows.into_iter().map(|mut r| {
            let w = r.pop().unwrap_or(f64::NAN);
            (r, w)
        }).unzip();
        return build_measure(field, width - 1, points, weights);
    }
    measure_from_value(field, read_json_value(field, path)?)
}

/// Sample rows: CSV without weights, a JSON array of points, or the points of
/// a measure file.
pub fn data(field: &str, path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let rows = if is_csv(path) {
        csv_rows(field, path)?
    } else {
        match read_json_value(field, path)? {
            Value::Object(mut o) if o.contains_key("points") => {
                serde_json::from_value(o.remove("points").unwrap_or(Value::Null))
                    .map_err(|e| CliError::input("invalid_data", field, format!("{field}: {e}")))?
            }
            v => serde_json::from_value(v).map_err(|e| CliError::input("invalid_data", field, format!("{field}: {e}")))?,
        }
    };
    let d = rows.first().map_or(0, Vec::len);
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(CliError::input("invalid_data", field, format!("{field}: rows must share a positive width")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(CliError::input("non_finite_input", field, format!("{field}: non-finite value")));
    }
    Ok(rows)
}

/// Loads a JSON spec, replacing file references: `"ref"` and `"anchor"`
/// strings by measures, `"V"`/`"W"` strings by potentials, `"data"` strings
/// by sample rows. Paths resolve against the spec file's directory.
pub fn spec<T: serde::de::DeserializeOwned>(field: &str, path: &Path) -> CliResult<T> {
    let mut v = read_json_value(field, path)?;
    let base = path.parent().map(Path::to_path_buf);
    expand(field, &mut v, base.as_deref())?;
    serde_json::from_value(v).map_err(|e| CliError::input("invalid_spec", field, format!("{field}: {e}")))
}

fn expand(field: &str, v: &mut Value, base: Option<&Path>) -> CliResult<()> {
    match v {
        Value::Object(map) => {
            for (key, child) in map.iter_mut() {
                if let Value::String(s) = child {
                    let loaded = match key.as_str() {
                        "ref" | "anchor" => Some(to_value(&measure(field, &resolve(s, base))?)),
                        "V" | "W" => Some(to_value(&catalog::potential(field, s, base)?)),
                        "data" => Some(to_value(&data(field, &resolve(s, base))?)),
                        _ => None,
                    };
                    if let Some(l) = loaded {
                        *child = l;
                        continue;
                    }
                }
                expand(field, child, base)?;
            }
        }
        Value::Array(items) => {
            for item in items {
                expand(field, item, base)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).unwrap_or(Value::Null)
}

pub fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::input("serialization", "out", format!("cannot serialize result: {e}")))?;
    text.push('\n');
    match out {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::input("io_error", "out", format!("out: cannot write {}: {e}", p.display()))),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::input("io_error", "out", format!("stdout: {e}")))
        }
    }
}

/// Support points with a header `x1,...,xd,weight`.
pub fn write_measure_csv(path: &Path, m: &DiscreteMeasure) -> CliResult<()> {
    let fail = |e: String| CliError::input("io_error", "csv-out", format!("csv-out: {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(|e| fail(e.to_string()))?;
    let mut header: Vec<String> = (1..=m.dim()).map(|i| format!("x{i}")).collect();
    header.push("weight".into());
    w.write_record(&header).map_err(|e| fail(e.to_string()))?;
    for (x, wt) in m.atoms() {
        let row: Vec<String> = x.iter().chain(std::iter::once(&wt)).map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(|e| fail(e.to_string()))?;
    }
    w.flush().map_err(|e| fail(e.to_string()))
}
