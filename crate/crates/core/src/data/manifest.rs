use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;

const HEADER: [&str; 3] = ["image_id", "path", "mos"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    /// Absolute, or relative to the manifest's directory once loaded.
    pub path: PathBuf,
    /// Ground-truth mean opinion score in the dataset's own units.
    pub mos: f64,
}

/// Read a `image_id,path,mos` CSV. Relative image paths are resolved
/// against the manifest's directory. Line numbers in errors count the header
/// as line 1.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    if !path.is_file() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(file);
    let mut records = reader.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| malformed(1, e.to_string()))?,
        None => return Err(DataError::EmptyManifest),
    };
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(malformed(
            1,
            format!("expected header `image_id,path,mos`, got `{}`", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, record) in records.enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| malformed(line, e.to_string()))?;
        if record.len() != 3 {
            return Err(malformed(line, format!("expected 3 fields, found {}", record.len())));
        }
        let image_id = record[0].trim().to_string();
        if image_id.is_empty() {
            return Err(malformed(line, "empty image_id".into()));
        }
        let raw_path = record[1].trim();
        if raw_path.is_empty() {
            return Err(malformed(line, "empty path".into()));
        }
        let mos: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| malformed(line, format!("mos {:?} is not a number", &record[2])))?;
        if !mos.is_finite() {
            return Err(DataError::NonFiniteScore(image_id));
        }
        if !seen.insert(image_id.clone()) {
            return Err(DataError::DuplicateId(image_id));
        }
        entries.push(ManifestEntry {
            image_id,
            path: base.join(raw_path),
            mos,
        });
    }
    Ok(entries)
}

/// Write entries as a manifest CSV. Paths are written as stored.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(HEADER).map_err(|e| io(e.into()))?;
    for e in entries {
        w.write_record([
            e.image_id.as_str(),
            &e.path.to_string_lossy(),
            &format!("{}", e.mos),
        ])
        .map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

fn malformed(line: u64, reason: String) -> DataError {
    DataError::MalformedRow { line, reason }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, body).unwrap();
        (dir, p)
    }

    #[test]
    fn rows_in_file_order_with_resolved_paths() {
        let (dir, p) = manifest("image_id,path,mos\nc,img/c.png,3\na,/abs/a.png,1.5\nb,b.png,-2\n");
        let e = load_manifest(&p).unwrap();
        let ids: Vec<_> = e.iter().map(|e| e.image_id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(e[0].path, dir.path().join("img/c.png"));
        assert_eq!(e[1].path, PathBuf::from("/abs/a.png"));
        assert_eq!(e[2].mos, -2.0);
    }

    #[test]
    fn bad_mos_names_the_line() {
        let (_d, p) = manifest("image_id,path,mos\na,a.png,1\nb,b.png,abc\n");
        match load_manifest(&p) {
            Err(DataError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_non_finite() {
        let (_d, p) = manifest("image_id,path,mos\nx1,a.png,1\nx1,b.png,2\n");
        assert!(matches!(load_manifest(&p), Err(DataError::DuplicateId(id)) if id == "x1"));
        let (_d, p) = manifest("image_id,path,mos\nx1,a.png,NaN\n");
        assert!(matches!(load_manifest(&p), Err(DataError::NonFiniteScore(id)) if id == "x1"));
        let (_d, p) = manifest("image_id,path,mos\nx1,a.png,inf\n");
        assert!(matches!(load_manifest(&p), Err(DataError::NonFiniteScore(_))));
    }

    #[test]
    fn structural_errors() {
        let (_d, p) = manifest("id,file,score\na,a.png,1\n");
        assert!(matches!(load_manifest(&p), Err(DataError::MalformedRow { line: 1, .. })));
        let (_d, p) = manifest("image_id,path,mos\na,a.png\n");
        assert!(matches!(load_manifest(&p), Err(DataError::MalformedRow { line: 2, .. })));
        assert!(matches!(
            load_manifest(Path::new("/definitely/not/here.csv")),
            Err(DataError::MissingFile(_))
        ));
        let (_d, p) = manifest("image_id,path,mos\n");
        assert_eq!(load_manifest(&p).unwrap(), vec![]);
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let entries = vec![
            ManifestEntry { image_id: "a".into(), path: "x/a.png".into(), mos: 0.1 + 0.2 },
            ManifestEntry { image_id: "b,c".into(), path: "b.png".into(), mos: -7.25 },
        ];
        write_manifest(&p, &entries).unwrap();
        let back = load_manifest(&p).unwrap();
        assert_eq!(back[0].mos, 0.1 + 0.2);
        assert_eq!(back[1].image_id, "b,c");
        assert_eq!(back[1].path, dir.path().join("b.png"));
    }
}
