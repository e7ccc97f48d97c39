//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size      field
//! 0       8         magic "GRCLCKPT"
//! 8       4         format version (u32, currently 1)
//! 12      4         layer count L (u32, currently 5)
//! 16      8·L       per layer: rows (u32), cols (u32)
//! ..      4·5       input_dim, encoder_hidden, projector_hidden, embed_dim, num_classes (u32)
//! ..      8         parameter count P (u64)
//! ..      8·P       flat parameter vector (f64)
//! ```
//!
//! Layer order is encoder 1, encoder 2, projector 1, projector 2, classifier.
//! Each layer stores its row-major weight matrix followed by its bias.

use super::{ModelConfig, ModelParams, LAYER_COUNT};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"GRCLCKPT";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> Result<()> {
    let cfg = params.config();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(LAYER_COUNT as u32).to_le_bytes())?;
    for (rows, cols) in cfg.layer_shapes() {
        out.write_all(&(rows as u32).to_le_bytes())?;
        out.write_all(&(cols as u32).to_le_bytes())?;
    }
    for v in [
        cfg.input_dim,
        cfg.encoder_hidden,
        cfg.projector_hidden,
        cfg.embed_dim,
        cfg.num_classes,
    ] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.as_flat() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ModelParams> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let layers = read_u32(&mut input)? as usize;
    if layers != LAYER_COUNT {
        return Err(Error::Format(format!("expected {LAYER_COUNT} layers, found {layers}")));
    }
    let mut shapes = Vec::with_capacity(layers);
    for _ in 0..layers {
        let rows = read_u32(&mut input)? as usize;
        let cols = read_u32(&mut input)? as usize;
        shapes.push((rows, cols));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = read_u32(&mut input)? as usize;
    }
    let config = ModelConfig {
        input_dim: dims[0],
        encoder_hidden: dims[1],
        projector_hidden: dims[2],
        embed_dim: dims[3],
        num_classes: dims[4],
    };
    config.validate()?;
    if shapes != config.layer_shapes() {
        return Err(Error::Format("layer shapes disagree with the stored configuration".into()));
    }
    let mut buf8 = [0u8; 8];
    input.read_exact(&mut buf8)?;
    let count = u64::from_le_bytes(buf8) as usize;
    if count != config.param_count() {
        return Err(Error::Format(format!(
            "parameter count {count} does not match layout ({})",
            config.param_count()
        )));
    }
    let mut flat = Vec::with_capacity(count);
    for _ in 0..count {
        input.read_exact(&mut buf8)?;
        flat.push(f64::from_le_bytes(buf8));
    }
    ModelParams::from_flat(config, flat)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
