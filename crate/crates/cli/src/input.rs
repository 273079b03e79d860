//! Parsing of input boxes and output locations.

use std::path::{Path, PathBuf};

use kan_verify::InputBox;
use serde::Deserialize;

use crate::CliError;

#[derive(Deserialize)]
#[serde(untagged)]
enum BoxSpec {
    Bounds { lower: Vec<f64>, upper: Vec<f64> },
    Intervals(Vec<[f64; 2]>),
}

/// Reads a box from inline JSON or from a JSON file. Accepts
/// `{"lower": [...], "upper": [...]}` or `[[lo, hi], ...]`.
pub fn parse_box(arg: &str) -> Result<InputBox, CliError> {
    let trimmed = arg.trim_start();
    let text = if trimmed.starts_with('{') || trimmed.starts_with('[') {
        arg.to_owned()
    } else {
        std::fs::read_to_string(arg).map_err(|e| CliError::Usage(format!("cannot read box file {arg}: {e}")))?
    };
    let spec: BoxSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("box must be {{\"lower\":[..],\"upper\":[..]}} or [[lo,hi],..]: {e}")))?;
    let (lower, upper) = match spec {
        BoxSpec::Bounds { lower, upper } => (lower, upper),
        BoxSpec::Intervals(iv) => iv.iter().map(|[l, h]| (*l, *h)).unzip(),
    };
    Ok(InputBox::new(lower, upper)?)
}

/// The box from `--box`, or the ball of `--radius` around the origin.
pub fn resolve_box(spec: Option<&str>, radius: Option<f64>, dim: usize) -> Result<InputBox, CliError> {
    match (spec, radius) {
        (Some(s), None) => parse_box(s),
        (None, Some(r)) => Ok(InputBox::ball(&vec![0.0; dim], r)?),
        (Some(_), Some(_)) => Err(CliError::Usage("give either --box or --radius, not both".into())),
        (None, None) => Err(CliError::Usage("an input box is required: pass --box or --radius".into())),
    }
}

/// `model.lp` -> `model.min.lp`.
pub fn min_lp_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.min.{ext}"),
        None => format!("{stem}.min"),
    };
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_box_forms_parse() {
        let a = parse_box(r#"{"lower":[0,-1],"upper":[1,1]}"#).unwrap();
        let b = parse_box("[[0,1],[-1,1]]").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.upper(), &[1.0, 1.0]);
    }

    #[test]
    fn inverted_box_is_rejected() {
        assert!(parse_box("[[1,0]]").is_err());
    }

    #[test]
    fn min_path_keeps_the_extension() {
        assert_eq!(min_lp_path(Path::new("out/model.lp")), PathBuf::from("out/model.min.lp"));
        assert_eq!(min_lp_path(Path::new("m")), PathBuf::from("m.min"));
    }
}
