//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes   "ILGEMB\0\0"
//! version    u32       1
//! scorer     u32       0 = complex, 1 = rotate
//! dim        u64
//! entities   u64
//! relations  u64
//! margin     f64
//! has_optim  u32       1 if AdaGrad state follows
//! lr         f64       (present, possibly 0, always)
//! entity_re, entity_im     entities × dim f64 each
//! relation_re, relation_im relations × dim f64 each
//! [the same four tables of accumulators when has_optim = 1]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AdaGrad, EmbeddingModel, Matrix, ScorerKind};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ILGEMB\0\0";
const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(
    mut out: W,
    model: &EmbeddingModel,
    optimizer: Option<&AdaGrad>,
) -> Result<()> {
    let scorer: u32 = match model.scorer {
        ScorerKind::Complex => 0,
        ScorerKind::Rotate => 1,
    };
    let mut header = Vec::with_capacity(64);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&scorer.to_le_bytes());
    header.extend_from_slice(&(model.dim as u64).to_le_bytes());
    header.extend_from_slice(&(model.entity_count() as u64).to_le_bytes());
    header.extend_from_slice(&(model.relation_count() as u64).to_le_bytes());
    header.extend_from_slice(&model.rotate_margin.to_le_bytes());
    header.extend_from_slice(&(optimizer.is_some() as u32).to_le_bytes());
    header.extend_from_slice(&optimizer.map_or(0.0, |o| o.learning_rate).to_le_bytes());
    out.write_all(&header).map_err(io_err)?;

    let mut tables = vec![
        &model.entity_re,
        &model.entity_im,
        &model.relation_re,
        &model.relation_im,
    ];
    if let Some(o) = optimizer {
        tables.extend([&o.entity_re, &o.entity_im, &o.relation_re, &o.relation_im]);
    }
    for t in tables {
        let mut buf = Vec::with_capacity(t.as_slice().len() * 8);
        for v in t.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf).map_err(io_err)?;
    Ok(buf)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(input)?))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(input)?))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(input)?))
}

fn read_matrix<R: Read>(input: &mut R, rows: usize, cols: usize) -> Result<Matrix> {
    let mut bytes = vec![0u8; rows * cols * 8];
    input.read_exact(&mut bytes).map_err(io_err)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(EmbeddingModel, Option<AdaGrad>)> {
    let magic: [u8; 8] = read_array(&mut input)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a model checkpoint".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let scorer = match read_u32(&mut input)? {
        0 => ScorerKind::Complex,
        1 => ScorerKind::Rotate,
        other => return Err(Error::Checkpoint(format!("unknown scorer tag {other}"))),
    };
    let dim = read_u64(&mut input)? as usize;
    let entities = read_u64(&mut input)? as usize;
    let relations = read_u64(&mut input)? as usize;
    let rotate_margin = read_f64(&mut input)?;
    let has_optim = read_u32(&mut input)? == 1;
    let learning_rate = read_f64(&mut input)?;

    let model = EmbeddingModel {
        dim,
        scorer,
        rotate_margin,
        entity_re: read_matrix(&mut input, entities, dim)?,
        entity_im: read_matrix(&mut input, entities, dim)?,
        relation_re: read_matrix(&mut input, relations, dim)?,
        relation_im: read_matrix(&mut input, relations, dim)?,
    };
    let optimizer = if has_optim {
        Some(AdaGrad {
            learning_rate,
            entity_re: read_matrix(&mut input, entities, dim)?,
            entity_im: read_matrix(&mut input, entities, dim)?,
            relation_re: read_matrix(&mut input, relations, dim)?,
            relation_im: read_matrix(&mut input, relations, dim)?,
        })
    } else {
        None
    };
    Ok((model, optimizer))
}

pub fn save_checkpoint(
    path: &Path,
    model: &EmbeddingModel,
    optimizer: Option<&AdaGrad>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), model, optimizer)
}

pub fn load_checkpoint(path: &Path) -> Result<(EmbeddingModel, Option<AdaGrad>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::TrainingConfig;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_exact() {
        for scorer in [ScorerKind::Complex, ScorerKind::Rotate] {
            let config = TrainingConfig {
                dim: 5,
                scorer,
                ..Default::default()
            };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
            let model = EmbeddingModel::random(7, 3, &config, &mut rng);
            let mut opt = AdaGrad::new(&model, 0.05);
            opt.entity_re.row_mut(2)[1] = 3.25;

            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &model, Some(&opt)).unwrap();
            let (m2, o2) = read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(m2, model);
            assert_eq!(o2.unwrap(), opt);

            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &model, None).unwrap();
            let (m3, o3) = read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(m3, model);
            assert!(o3.is_none());
        }
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(read_checkpoint(&b"not a checkpoint at all"[..]).is_err());
        let model = EmbeddingModel::zeros(2, 1, 2, ScorerKind::Complex);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model, None).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
