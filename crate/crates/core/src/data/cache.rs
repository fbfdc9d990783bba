//! Binary shard cache: persist a partitioned scenario so repeated runs
//! skip ingestion and partitioning.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "CFLS", u32 version = 1
//! u32 num_clients, u32 side, u32 num_classes, u32 num_het_classes
//! per heterogeneity class:
//!   u64 n_test, f64×(n_test·side²) test_x, u64×n_test test_y
//! per client:
//!   u64 client_id, u64 het_class, u64 samples_per_label, u64 n_train,
//!   f64×(n_train·side²) train_x, u64×n_train train_y
//! ```
//!
//! Tensors are stored as 64-bit little-endian words (labels widened to
//! u64), so the file round-trips shards bit-exactly.

use crate::data::{ClassTestBlock, ClientShard};
use crate::error::{Error, Result};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

const MAGIC: &[u8; 4] = b"CFLS";
const VERSION: u32 = 1;

fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn write_labels(w: &mut impl Write, labels: &[u8]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(labels.len() * 8);
    for &l in labels {
        buf.extend_from_slice(&u64::from(l).to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, count: usize) -> std::io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_labels(r: &mut impl Read, count: usize) -> Result<Vec<u8>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Data(format!("truncated label block: {e}")))?;
    bytes
        .chunks_exact(8)
        .map(|c| {
            let v = u64::from_le_bytes(c.try_into().unwrap());
            u8::try_from(v).map_err(|_| Error::Data(format!("label {v} out of byte range")))
        })
        .collect()
}

/// Write shards to `path`. Shards must be in ascending client-id order with
/// contiguous heterogeneity classes, as produced by
/// [`crate::data::partition`].
pub fn save_shards(path: &Path, shards: &[ClientShard], side: usize, num_classes: usize) -> Result<()> {
    if shards.is_empty() {
        return Err(Error::Data("no shards to save".into()));
    }
    let het_classes = shards.iter().map(|s| s.het_class).max().unwrap() + 1;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    for v in [shards.len() as u32, side as u32, num_classes as u32, het_classes as u32] {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    // One test block per class, taken from the first shard of that class.
    for c in 0..het_classes {
        let rep = shards
            .iter()
            .find(|s| s.het_class == c)
            .ok_or_else(|| Error::Data(format!("no shard in heterogeneity class {c}")))?;
        w.write_all(&(rep.test_y.len() as u64).to_le_bytes()).map_err(io_err)?;
        write_f64s(&mut w, &rep.test_x).map_err(io_err)?;
        write_labels(&mut w, &rep.test_y).map_err(io_err)?;
    }
    for s in shards {
        for v in [
            s.client_id as u64,
            s.het_class as u64,
            s.samples_per_label as u64,
            s.train_y.len() as u64,
        ] {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
        write_f64s(&mut w, &s.train_x).map_err(io_err)?;
        write_labels(&mut w, &s.train_y).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Read shards written by [`save_shards`]. Test tensors are re-shared per
/// class (one allocation per class, `Arc`-cloned into each shard).
pub fn load_shards(path: &Path) -> Result<Vec<ClientShard>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io_err = |e: std::io::Error| Error::Data(format!("{}: truncated cache: {e}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Data(format!(
            "{} is not a shard cache (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(&mut r).map_err(io_err)?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported cache version {version}",
            path.display()
        )));
    }
    let num_clients = read_u32(&mut r).map_err(io_err)? as usize;
    let side = read_u32(&mut r).map_err(io_err)? as usize;
    let _num_classes = read_u32(&mut r).map_err(io_err)? as usize;
    let het_classes = read_u32(&mut r).map_err(io_err)? as usize;
    let dim = side * side;

    let mut class_test: Vec<ClassTestBlock> = Vec::with_capacity(het_classes);
    for _ in 0..het_classes {
        let n_test = read_u64(&mut r).map_err(io_err)? as usize;
        let x = read_f64s(&mut r, n_test * dim).map_err(io_err)?;
        let y = read_labels(&mut r, n_test)?;
        class_test.push((Arc::new(x), Arc::new(y)));
    }

    let mut shards = Vec::with_capacity(num_clients);
    for _ in 0..num_clients {
        let client_id = read_u64(&mut r).map_err(io_err)? as usize;
        let het_class = read_u64(&mut r).map_err(io_err)? as usize;
        let samples_per_label = read_u64(&mut r).map_err(io_err)? as usize;
        let n_train = read_u64(&mut r).map_err(io_err)? as usize;
        if het_class >= het_classes {
            return Err(Error::Data(format!(
                "{}: client {client_id} references class {het_class} of {het_classes}",
                path.display()
            )));
        }
        let train_x = read_f64s(&mut r, n_train * dim).map_err(io_err)?;
        let train_y = read_labels(&mut r, n_train)?;
        let (test_x, test_y) = class_test[het_class].clone();
        shards.push(ClientShard {
            client_id,
            train_x,
            train_y,
            test_x,
            test_y,
            het_class,
            samples_per_label,
        });
    }
    Ok(shards)
}
