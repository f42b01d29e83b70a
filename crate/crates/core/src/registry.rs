//! Vendored reference datasets and their manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{read_csv, Dataset, LabelColumn};
use crate::error::{Error, Result};
use crate::Scalar;

/// Sidecar describing one vendored CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub csv: String,
    pub label_column: String,
    pub class_names: Vec<String>,
    pub sha256: String,
    #[serde(default)]
    pub source: String,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Verifies the checksum, then parses the CSV content.
    pub fn load<F: Scalar>(&self, csv_bytes: &[u8]) -> Result<Dataset<F>> {
        let actual = sha256_hex(csv_bytes);
        if !actual.eq_ignore_ascii_case(&self.sha256) {
            return Err(Error::ChecksumMismatch {
                name: self.name.clone(),
                expected: self.sha256.clone(),
                actual,
            });
        }
        read_csv(
            self.name.clone(),
            csv_bytes,
            &LabelColumn::Name(self.label_column.clone()),
            Some(&self.class_names),
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Builtin {
    manifest: &'static str,
    csv: &'static [u8],
}

const BUILTINS: &[Builtin] = &[
    Builtin {
        manifest: include_str!("../data/iris.toml"),
        csv: include_bytes!("../data/iris.csv"),
    },
    Builtin {
        manifest: include_str!("../data/wine.toml"),
        csv: include_bytes!("../data/winequality-red.csv"),
    },
    Builtin {
        manifest: include_str!("../data/mobile.toml"),
        csv: include_bytes!("../data/mobile.csv"),
    },
];

/// Names of the vendored datasets, in registry order.
pub fn builtin_names() -> Vec<String> {
    builtin_manifests().into_iter().map(|m| m.name).collect()
}

pub fn builtin_manifests() -> Vec<Manifest> {
    BUILTINS
        .iter()
        .map(|b| Manifest::parse(b.manifest).expect("vendored manifest parses"))
        .collect()
}

pub fn builtin<F: Scalar>(name: &str) -> Result<Dataset<F>> {
    BUILTINS
        .iter()
        .find_map(|b| {
            let m = Manifest::parse(b.manifest).ok()?;
            (m.name == name).then(|| m.load(b.csv))
        })
        .unwrap_or_else(|| Err(Error::UnknownDataset(name.to_string())))
}

/// Loads a manifest file and the CSV it names (relative to the manifest).
pub fn load_manifest<F: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<F>> {
    let path = path.as_ref();
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let text = read(path)?;
    let manifest = Manifest::parse(&String::from_utf8_lossy(&text))?;
    let csv_path = path.parent().unwrap_or(Path::new(".")).join(&manifest.csv);
    manifest.load(&read(&csv_path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_verify_and_load() {
        let iris: Dataset = builtin("iris").unwrap();
        assert_eq!((iris.n_rows(), iris.n_features(), iris.n_classes()), (150, 4, 3));
        assert!(iris.feature_names().contains(&"petal length (cm)".to_string()));
        assert!(iris.feature_names().contains(&"petal width (cm)".to_string()));

        let wine: Dataset = builtin("wine").unwrap();
        assert_eq!((wine.n_rows(), wine.n_features(), wine.n_classes()), (1599, 11, 6));

        let mobile: Dataset = builtin("mobile").unwrap();
        assert_eq!((mobile.n_rows(), mobile.n_features(), mobile.n_classes()), (2000, 20, 4));
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(builtin::<f64>("nope"), Err(Error::UnknownDataset(_))));
        assert_eq!(builtin_names(), vec!["iris", "wine", "mobile"]);
    }

    #[test]
    fn tampered_csv_fails_checksum() {
        let m = Manifest::parse(BUILTINS[0].manifest).unwrap();
        let mut bytes = BUILTINS[0].csv.to_vec();
        bytes[100] ^= 1;
        assert!(matches!(
            m.load::<f64>(&bytes),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn manifest_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let csv = b"a,b,y\n1,2,no\n2,1,yes\n";
        std::fs::write(dir.path().join("t.csv"), csv).unwrap();
        let manifest = format!(
            "name = \"t\"\ncsv = \"t.csv\"\nlabel_column = \"y\"\nclass_names = [\"yes\", \"no\"]\nsha256 = \"{}\"\n",
            sha256_hex(csv)
        );
        std::fs::write(dir.path().join("t.toml"), manifest).unwrap();
        let ds: Dataset = load_manifest(dir.path().join("t.toml")).unwrap();
        assert_eq!(ds.labels(), &[1, 0]);
    }
}
