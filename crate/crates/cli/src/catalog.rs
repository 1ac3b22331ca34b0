use std::path::Path;

use wassercalc_core::functionals::Potential;
use wassercalc_core::CostFunction;

use crate::error::{CliError, CliResult};
use crate::io;

pub fn parse_list(field: &str, s: &str) -> CliResult<Vec<f64>> {
    let vals: Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if !v.is_empty() && v.iter().all(|x| x.is_finite()) => Ok(v),
        Ok(_) => Err(CliError::input("invalid_number", field, format!("{field}: expected finite numbers, got {s:?}"))),
        Err(e) => Err(CliError::input("invalid_number", field, format!("{field}: {e} in {s:?}"))),
    }
}

/// `catalog:<name>[:params]`, an inline JSON object, or a JSON file path.
pub fn potential(field: &str, spec: &str, base: Option<&Path>) -> CliResult<Potential> {
    if let Some(rest) = spec.strip_prefix("catalog:") {
        let (name, params) = match rest.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (rest, None),
        };
        let need = |what: &str| {
            params.ok_or_else(|| {
                CliError::input("invalid_potential", field, format!("{field}: catalog:{name} needs {what}"))
            })
        };
        let none = |p: Option<&str>| match p {
            None => Ok(()),
            Some(_) => Err(CliError::input("invalid_potential", field, format!("{field}: catalog:{name} takes no parameters"))),
        };
        return match name {
            "linear" => Ok(Potential::Linear { a: parse_list(field, need("coefficients a1,a2,...")?)? }),
            "sqnorm" => {
                let scale = match params {
                    Some(p) => scalar(field, p)?,
                    None => 1.0,
                };
                Ok(Potential::SqNorm { scale })
            }
            "double_well" => none(params).map(|_| Potential::DoubleWell),
            "log_sum_exp" => none(params).map(|_| Potential::LogSumExp),
            "polynomial_1d" => Ok(Potential::Polynomial1d { coeffs: parse_list(field, need("coefficients c0,c1,...")?)? }),
            other => Err(CliError::input(
                "unknown_catalog_item",
                field,
                format!("{field}: unknown potential {other:?}; known: linear, sqnorm, double_well, log_sum_exp, polynomial_1d"),
            )),
        };
    }
    let value = if spec.trim_start().starts_with('{') {
        serde_json::from_str(spec).map_err(|e| CliError::input("invalid_json", field, format!("{field}: {e}")))?
    } else {
        io::read_json_value(field, &io::resolve(spec, base))?
    };
    serde_json::from_value(value).map_err(|e| CliError::input("invalid_potential", field, format!("{field}: {e}")))
}

fn scalar(field: &str, s: &str) -> CliResult<f64> {
    match s.trim().parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(CliError::input("invalid_number", field, format!("{field}: expected a finite number, got {s:?}"))),
    }
}

/// `sqeuclidean`, `pnorm:p`, or the same names behind `catalog:`.
pub fn cost(field: &str, spec: &str) -> CliResult<CostFunction> {
    let name = spec.strip_prefix("catalog:").unwrap_or(spec);
    match name.split_once(':') {
        None if name == "sqeuclidean" => Ok(CostFunction::SqEuclidean),
        None if name == "euclidean" => Ok(CostFunction::PNorm { p: 1.0 }),
        Some(("pnorm", p)) => {
            let p = scalar(field, p)?;
            if p < 1.0 {
                return Err(CliError::input("invalid_cost", field, format!("{field}: pnorm needs p ≥ 1, got {p}")));
            }
            Ok(CostFunction::PNorm { p })
        }
        _ => Err(CliError::input(
            "invalid_cost",
            field,
            format!("{field}: unknown cost {spec:?}; known: sqeuclidean, euclidean, pnorm:p"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_names() {
        assert_eq!(potential("V", "catalog:double_well", None).unwrap(), Potential::DoubleWell);
        assert_eq!(potential("V", "catalog:sqnorm:0.5", None).unwrap(), Potential::SqNorm { scale: 0.5 });
        assert_eq!(potential("V", "catalog:linear:1,-2", None).unwrap(), Potential::Linear { a: vec![1.0, -2.0] });
        assert_eq!(potential("V", r#"{"type":"log_sum_exp"}"#, None).unwrap(), Potential::LogSumExp);
        assert_eq!(potential("V", "catalog:nope", None).unwrap_err().code, "unknown_catalog_item");
        assert_eq!(potential("V", "catalog:linear", None).unwrap_err().field.as_deref(), Some("V"));
    }

    #[test]
    fn costs() {
        assert!(matches!(cost("cost", "sqeuclidean").unwrap(), CostFunction::SqEuclidean));
        assert!(matches!(cost("cost", "pnorm:3").unwrap(), CostFunction::PNorm { p } if p == 3.0));
        assert!(matches!(cost("cost", "catalog:euclidean").unwrap(), CostFunction::PNorm { p } if p == 1.0));
        assert_eq!(cost("cost", "pnorm:0.5").unwrap_err().code, "invalid_cost");
    }
}
