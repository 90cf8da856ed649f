//! Superpoint label files: newline-delimited decimal integers, one per
//! point. Ids are remapped to a dense `[0, M)` space on load, preserving
//! first-occurrence order, so downstream code can index by cluster id.

use crate::error::{Error, Result};
use crate::types::SuperpointLabels;

pub fn parse_superpoints(bytes: &[u8], expected_n: usize) -> Result<SuperpointLabels> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::validation("superpoint file is not valid UTF-8"))?;
    let mut raw = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: i64 = line.parse().map_err(|_| Error::Parse {
            line: line_no + 1,
            msg: format!("bad superpoint id '{line}'"),
        })?;
        if value < 0 {
            return Err(Error::validation(format!(
                "negative superpoint id {value} at line {}",
                line_no + 1
            )));
        }
        raw.push(value as usize);
    }
    if raw.len() != expected_n {
        return Err(Error::Truncated {
            what: "superpoint labels",
            expected: expected_n,
            found: raw.len(),
        });
    }
    SuperpointLabels::from_raw(&raw)
}

pub fn write_superpoints(labels: &SuperpointLabels) -> Vec<u8> {
    let mut out = String::with_capacity(labels.len() * 4);
    for &id in labels.ids() {
        out.push_str(&id.to_string());
        out.push('\n');
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_ids_densified_in_first_occurrence_order() {
        let labels = parse_superpoints(b"5\n5\n9\n", 3).unwrap();
        assert_eq!(labels.ids(), &[0, 0, 1]);
        assert_eq!(labels.count(), 2);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            parse_superpoints(b"0\n", 2).unwrap_err(),
            Error::Truncated { expected: 2, found: 1, .. }
        ));
    }

    #[test]
    fn negative_id_is_an_error() {
        assert!(parse_superpoints(b"-1\n", 1).is_err());
    }

    #[test]
    fn all_identical_ids_form_one_cluster() {
        let text = "7\n".repeat(100);
        let labels = parse_superpoints(text.as_bytes(), 100).unwrap();
        assert_eq!(labels.count(), 1);
    }

    #[test]
    fn round_trip() {
        let labels = parse_superpoints(b"3\n1\n3\n0\n", 4).unwrap();
        let again = parse_superpoints(&write_superpoints(&labels), 4).unwrap();
        assert_eq!(labels, again);
    }
}
