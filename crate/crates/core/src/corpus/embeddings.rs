use std::collections::BTreeSet;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::Vocabulary;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Overwrites rows of `table` (`vocab.len() × h`) with vectors from a text
/// file of `token v_1 .. v_h` lines. An optional leading `count dim` header is
/// accepted. Tokens outside the vocabulary are ignored; the number of distinct
/// rows replaced is returned.
pub fn import_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    table: &mut Tensor,
) -> Result<usize> {
    let path = path.as_ref();
    let width = table.require_matrix("import_embeddings")?.1;
    if table.rows() != vocab.len() {
        return Err(Error::Shape {
            op: "import_embeddings",
            lhs: table.shape().to_vec(),
            rhs: vec![vocab.len(), width],
        });
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut replaced = BTreeSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if n == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            let dim: usize = fields[1].parse().expect("checked");
            if dim != width {
                return Err(dim_error(path, dim, width));
            }
            continue;
        }
        let dim = fields.len() - 1;
        if dim != width {
            return Err(dim_error(path, dim, width));
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        let id = vocab.word_id(fields[0]);
        if id == super::UNK {
            continue;
        }
        table.data_mut()[id * width..(id + 1) * width].copy_from_slice(&values);
        replaced.insert(id);
    }
    Ok(replaced.len())
}

fn dim_error(path: &Path, file_dim: usize, model_dim: usize) -> Error {
    Error::EmbeddingDim {
        file: path.to_path_buf(),
        file_dim,
        model_dim,
    }
}
