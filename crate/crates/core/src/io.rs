//! File formats. Function, sequence and block files name their lattice by a path
//! resolved relative to the file itself.
//!
//! - function: `{"lattice": path, "leaf_values": [..]}` (leaves in lattice order)
//! - sequence: `{"lattice": path, "entries": {"id": value, ..}}`
//! - blocks: `{"lattice": path, "blocks": {"id": [[row], ..], ..}}`

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gspace::CoefSequence;
use crate::lattice::Lattice;
use crate::matrix::Matrix;
use crate::mfunc::StepFunction;
use crate::paraprod::TransformBlocks;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn parse<'a, D: Deserialize<'a>>(text: &'a str, path: &Path) -> Result<D> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn resolve(file: &Path, lattice: &str) -> PathBuf {
    let p = Path::new(lattice);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        file.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn read_lattice(path: &Path) -> Result<Lattice> {
    Lattice::from_json(&read(path)?)
}

#[derive(Serialize, Deserialize)]
struct FunctionFile {
    lattice: String,
    leaf_values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SequenceFile {
    lattice: String,
    entries: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct BlocksFile {
    lattice: String,
    blocks: BTreeMap<String, Vec<Vec<f64>>>,
}

fn label(lat: &Lattice, key: &str) -> Result<crate::lattice::NodeId> {
    let id: i64 = key
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("node id {key:?} is not an integer")))?;
    lat.resolve(id)
}

pub fn read_function(path: &Path) -> Result<StepFunction> {
    let text = read(path)?;
    let file: FunctionFile = parse(&text, path)?;
    let lat = Arc::new(read_lattice(&resolve(path, &file.lattice))?);
    StepFunction::new(lat, file.leaf_values)
}

/// `lattice_ref` is written verbatim; it should be relative to `path` or absolute.
pub fn function_json(lattice_ref: &str, f: &StepFunction) -> String {
    let file = FunctionFile {
        lattice: lattice_ref.to_string(),
        leaf_values: f.values().to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("json") + "\n"
}

pub fn read_sequence(path: &Path) -> Result<CoefSequence> {
    let text = read(path)?;
    let file: SequenceFile = parse(&text, path)?;
    let lat = Arc::new(read_lattice(&resolve(path, &file.lattice))?);
    let entries = file
        .entries
        .iter()
        .map(|(k, &v)| label(&lat, k).map(|id| (id, v)))
        .collect::<Result<Vec<_>>>()?;
    CoefSequence::from_entries(lat, entries)
}

pub fn sequence_json(lattice_ref: &str, s: &CoefSequence) -> String {
    let lat = s.lattice();
    let file = SequenceFile {
        lattice: lattice_ref.to_string(),
        entries: s.entries().iter().map(|(&id, &v)| (lat.label(id).to_string(), v)).collect(),
    };
    serde_json::to_string_pretty(&file).expect("json") + "\n"
}

pub fn read_blocks(path: &Path) -> Result<TransformBlocks> {
    let text = read(path)?;
    let file: BlocksFile = parse(&text, path)?;
    let lat = Arc::new(read_lattice(&resolve(path, &file.lattice))?);
    let mut t = TransformBlocks::empty(lat.clone());
    for (k, rows) in &file.blocks {
        let id = label(&lat, k)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Parse(format!("block {k} is not square")));
        }
        t.insert(id, Matrix::from_row_major(n, n, rows.concat())?)?;
    }
    Ok(t)
}

pub fn blocks_json(lattice_ref: &str, t: &TransformBlocks) -> String {
    let lat = t.lattice();
    let file = BlocksFile {
        lattice: lattice_ref.to_string(),
        blocks: t
            .blocks()
            .iter()
            .map(|(&id, b)| {
                let rows = (0..b.rows()).map(|i| b.row(i).to_vec()).collect();
                (lat.label(id).to_string(), rows)
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("json") + "\n"
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix<f64>> {
    Matrix::from_csv(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::uniform_radic;

    #[test]
    fn round_trips_through_files() {
        let dir = std::env::temp_dir().join(format!("nhmart-io-{}", std::process::id()));
        fs::create_dir_all(dir.join("sub")).unwrap();
        let lat = Arc::new(uniform_radic::<f64>(2, 2, 1.0).unwrap());
        write(&dir.join("lat.json"), &lat.to_json()).unwrap();
        let f = StepFunction::new(lat.clone(), vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        write(&dir.join("sub/f.json"), &function_json("../lat.json", &f)).unwrap();
        let g = read_function(&dir.join("sub/f.json")).unwrap();
        assert_eq!(g.values(), f.values());

        let s = CoefSequence::from_entries(lat.clone(), [(lat.resolve(1).unwrap(), 2.5)]).unwrap();
        write(&dir.join("s.json"), &sequence_json("lat.json", &s)).unwrap();
        let s2 = read_sequence(&dir.join("s.json")).unwrap();
        assert_eq!(s2.dense(), s.dense());

        let t = TransformBlocks::identity(lat.clone());
        write(&dir.join("t.json"), &blocks_json("lat.json", &t)).unwrap();
        let t2 = read_blocks(&dir.join("t.json")).unwrap();
        assert_eq!(t2.blocks().len(), 3);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_lattice(Path::new("/nonexistent/x.json")), Err(Error::Io(_))));
    }
}
