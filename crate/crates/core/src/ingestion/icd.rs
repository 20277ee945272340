use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Maximum number of codes kept per admission.
pub const CODE_CAP: usize = 30;

/// Canonical ICD-9 code → description table.
#[derive(Clone, Debug, Default)]
pub struct IcdMap {
    descriptions: HashMap<String, String>,
}

#[derive(Deserialize)]
struct Row {
    code: String,
    description: String,
}

impl IcdMap {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            descriptions: pairs.into_iter().collect(),
        }
    }

    /// Reads a CSV with header `code,description`. Codes are canonicalized on
    /// load, so undotted entries are accepted too.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut descriptions = HashMap::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })?;
            let code = canonicalize_icd9(&row.code).ok_or_else(|| Error::Parse {
                line: i + 2,
                message: format!("invalid ICD-9 code {:?}", row.code),
            })?;
            descriptions.insert(code, row.description.trim().to_string());
        }
        Ok(Self { descriptions })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }

    pub fn len(&self) -> usize {
        self.descriptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptions.is_empty()
    }

    pub fn description(&self, canonical: &str) -> Option<&str> {
        self.descriptions.get(canonical).map(String::as_str)
    }
}

/// Canonical dotted ICD-9 form: uppercase, with the decimal point after three
/// characters for numeric and V codes and after four for E codes. Returns
/// `None` for strings that are not ICD-9 shaped.
pub fn canonicalize_icd9(raw: &str) -> Option<String> {
    let compact: String = raw
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '.')
        .collect::<String>()
        .to_uppercase();
    let (prefix_len, min_len, max_len) = match compact.chars().next()? {
        'E' => (4, 4, 5),
        'V' => (3, 3, 5),
        c if c.is_ascii_digit() => (3, 3, 5),
        _ => return None,
    };
    if compact.len() < min_len || compact.len() > max_len || !compact[1..].chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    if compact.len() == prefix_len {
        Some(compact)
    } else {
        Some(format!("{}.{}", &compact[..prefix_len], &compact[prefix_len..]))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormalizedCodes {
    pub codes: Vec<String>,
    pub descriptions: Vec<String>,
    /// Raw codes that could not be mapped.
    pub dropped: Vec<String>,
}

/// Canonicalizes, deduplicates (first occurrence wins), drops codes missing
/// from the table and truncates to `cap`.
pub fn normalize_icd(raw_codes: &[String], map: &IcdMap, cap: usize) -> Result<NormalizedCodes> {
    if map.is_empty() {
        return Err(Error::Config("ICD map is empty".into()));
    }
    let mut out = NormalizedCodes::default();
    let mut seen = HashSet::new();
    for raw in raw_codes {
        let Some(desc) = canonicalize_icd9(raw).and_then(|c| map.description(&c).map(|d| (c, d))) else {
            log::warn!("dropping unknown ICD-9 code {raw:?}");
            out.dropped.push(raw.clone());
            continue;
        };
        let (code, desc) = desc;
        if out.codes.len() < cap && seen.insert(code.clone()) {
            out.codes.push(code);
            out.descriptions.push(desc.to_string());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> IcdMap {
        IcdMap::from_reader(
            "code,description\n428.0,\"Congestive heart failure, unspecified\"\n401.9,Unspecified essential hypertension\nV45.81,Aortocoronary bypass status\nE849.7,Accidents occurring in residential institution\n".as_bytes(),
        )
        .unwrap()
    }

    #[test]
    fn canonical_forms() {
        assert_eq!(canonicalize_icd9("4280").as_deref(), Some("428.0"));
        assert_eq!(canonicalize_icd9("428.0").as_deref(), Some("428.0"));
        assert_eq!(canonicalize_icd9("428").as_deref(), Some("428"));
        assert_eq!(canonicalize_icd9("v4581").as_deref(), Some("V45.81"));
        assert_eq!(canonicalize_icd9("E8497").as_deref(), Some("E849.7"));
        assert_eq!(canonicalize_icd9("XYZ9"), None);
        assert_eq!(canonicalize_icd9("42"), None);
        assert_eq!(canonicalize_icd9(""), None);
    }

    #[test]
    fn duplicates_collapse_with_description_from_table() {
        let n = normalize_icd(&["4280".into(), "4280".into()], &map(), CODE_CAP).unwrap();
        assert_eq!(n.codes, vec!["428.0"]);
        assert_eq!(n.descriptions, vec!["Congestive heart failure, unspecified"]);
    }

    #[test]
    fn unknown_codes_are_dropped() {
        let n = normalize_icd(&["XYZ9".into()], &map(), CODE_CAP).unwrap();
        assert!(n.codes.is_empty() && n.descriptions.is_empty());
        assert_eq!(n.dropped, vec!["XYZ9"]);
        // Well-formed but absent from the table.
        let n = normalize_icd(&["2500".into()], &map(), CODE_CAP).unwrap();
        assert_eq!(n.dropped.len(), 1);
    }

    #[test]
    fn cap_keeps_first_codes() {
        let pairs = (0..35).map(|i| (format!("{:03}.1", 100 + i), format!("d{i}")));
        let m = IcdMap::from_pairs(pairs);
        let raw: Vec<String> = (0..35).map(|i| format!("{:03}1", 100 + i)).collect();
        let n = normalize_icd(&raw, &m, CODE_CAP).unwrap();
        assert_eq!(n.codes.len(), 30);
        assert_eq!(n.codes[29], "129.1");
        assert_eq!(n.codes.len(), n.descriptions.len());
    }

    #[test]
    fn empty_table_is_a_config_error() {
        assert!(matches!(
            normalize_icd(&["4280".into()], &IcdMap::default(), CODE_CAP),
            Err(Error::Config(_))
        ));
    }
}
