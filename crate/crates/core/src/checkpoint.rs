//! Binary parameter archive: magic, version, model config (JSON), then named tensors
//! as `name, dtype, shape, little-endian values`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParallelTime};
use crate::numcore::{DType, ParamStore, Real, Tensor};

const MAGIC: &[u8; 4] = b"PTCK";
pub const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated archive: {e}")))?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(get_array(r)?))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(get_array(r)?))
}

fn get_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated archive: {e}")))?;
    Ok(b)
}

pub fn write_checkpoint<T: Real>(w: &mut impl Write, cfg: &ModelConfig, params: &ParamStore<T>) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    let cfg_json = serde_json::to_vec(cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
    put_u64(w, cfg_json.len() as u64)?;
    w.write_all(&cfg_json)?;
    put_u32(w, params.len() as u32)?;
    for (name, t) in params.iter() {
        put_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[match T::DTYPE {
            DType::F32 => 0,
            DType::F64 => 1,
        }])?;
        put_u32(w, t.ndim() as u32)?;
        for &d in t.shape() {
            put_u64(w, d as u64)?;
        }
        for &v in t.data() {
            match T::DTYPE {
                DType::F32 => w.write_all(&(v.as_f64() as f32).to_le_bytes())?,
                DType::F64 => w.write_all(&v.as_f64().to_le_bytes())?,
            }
        }
    }
    Ok(())
}

/// Read an archive, converting stored values to `T`.
pub fn read_checkpoint<T: Real>(r: &mut impl Read) -> Result<(ModelConfig, ParamStore<T>)> {
    if &get_array::<4>(r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = get_u64(r)? as usize;
    let cfg: ModelConfig =
        serde_json::from_slice(&get_bytes(r, n)?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    let count = get_u32(r)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = get_u32(r)? as usize;
        let name = String::from_utf8(get_bytes(r, len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let dtype = get_array::<1>(r)?[0];
        let ndim = get_u32(r)? as usize;
        let shape = (0..ndim).map(|_| get_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data: Vec<T> = match dtype {
            0 => get_bytes(r, 4 * numel)?
                .chunks_exact(4)
                .map(|c| T::of(f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))))
                .collect(),
            1 => get_bytes(r, 8 * numel)?
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
            d => return Err(Error::Checkpoint(format!("unknown dtype tag {d} for {name}"))),
        };
        params.insert(name, Tensor::new(&shape, data)?);
    }
    Ok((cfg, params))
}

/// Check that `params` holds exactly the tensors `model` declares, with their shapes.
pub fn check_params<T: Real>(model: &ParallelTime, params: &ParamStore<T>) -> Result<()> {
    let specs = model.param_specs();
    for s in &specs {
        let t = params
            .get(&s.name)
            .map_err(|_| Error::Checkpoint(format!("missing tensor {}", s.name)))?;
        if t.shape() != s.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?}, model expects {:?}",
                s.name,
                t.shape(),
                s.shape
            )));
        }
    }
    if params.len() != specs.len() {
        let extra: Vec<&str> = params.names().filter(|n| !specs.iter().any(|s| s.name == *n)).collect();
        return Err(Error::Checkpoint(format!("unexpected tensors {extra:?}")));
    }
    Ok(())
}

pub fn save<T: Real>(path: impl AsRef<Path>, cfg: &ModelConfig, params: &ParamStore<T>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut f, cfg, params)?;
    f.flush()?;
    Ok(())
}

/// Load an archive and rebuild its model, verifying every tensor.
pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<(ParallelTime, ParamStore<T>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut f = std::io::BufReader::new(file);
    let (cfg, params) = read_checkpoint(&mut f)?;
    let model = ParallelTime::new(cfg)?;
    check_params(&model, &params)?;
    Ok((model, params))
}
