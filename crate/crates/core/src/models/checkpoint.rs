// Checkpoint layout (all integers little-endian):
//
//   magic        8 bytes  "SGAEDCK1"
//   manifest     u32 length + UTF-8 text, one `key=value` per line
//   count        u32 number of parameter arrays
//   per array    u32 name length, name bytes, u32 rank, u64 per dim,
//                then numel × f64

use std::fs;
use std::path::Path;

use super::{ModelDims, SumGanModel, Variant, VariantSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SGAEDCK1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointManifest {
    pub spec: VariantSpec,
    pub epoch: usize,
}

impl CheckpointManifest {
    fn to_text(&self) -> String {
        let d = self.spec.dims;
        format!(
            "variant={}\ninput_dim={}\ndim={}\nhidden={}\nheads={}\nrecurrent_layers={}\nseed={}\nepoch={}\n",
            self.spec.variant.name(),
            d.input_dim,
            d.dim,
            d.hidden,
            d.heads,
            d.recurrent_layers,
            self.spec.seed,
            self.epoch
        )
    }

    fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut fields = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| format!("bad manifest line {line:?}"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| format!("manifest missing {k}"));
        let num = |k: &str| -> std::result::Result<u64, String> {
            get(k)?.parse::<u64>().map_err(|e| format!("{k}: {e}"))
        };
        let variant: Variant = get("variant")?.parse().map_err(|e: Error| e.to_string())?;
        let dims = ModelDims {
            input_dim: num("input_dim")? as usize,
            dim: num("dim")? as usize,
            hidden: num("hidden")? as usize,
            heads: num("heads")? as usize,
            recurrent_layers: num("recurrent_layers")? as usize,
        };
        Ok(Self {
            spec: VariantSpec::new(variant, dims, num("seed")?),
            epoch: num("epoch")? as usize,
        })
    }
}

pub fn write_checkpoint(model: &SumGanModel, epoch: usize) -> Vec<u8> {
    let manifest = CheckpointManifest {
        spec: *model.spec(),
        epoch,
    }
    .to_text();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    out.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    for (_, p) in model.store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self, n: usize) -> std::result::Result<&'a str, String> {
        std::str::from_utf8(self.take(n)?).map_err(|e| e.to_string())
    }
}

/// Rebuilds a model from checkpoint bytes. Parameter names and shapes must
/// match the architecture described by the manifest exactly.
pub fn read_checkpoint(bytes: &[u8]) -> std::result::Result<(SumGanModel, CheckpointManifest), String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err("bad magic header".into());
    }
    let mlen = r.u32()? as usize;
    let manifest = CheckpointManifest::parse(r.str(mlen)?)?;
    let mut model = SumGanModel::new(manifest.spec).map_err(|e| e.to_string())?;
    let count = r.u32()? as usize;
    if count != model.store.len() {
        return Err(format!("expected {} parameters, found {count}", model.store.len()));
    }
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = r.str(nlen)?.to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let data = r
            .take(numel.checked_mul(8).ok_or("array too large")?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let id = model
            .store
            .by_name(&name)
            .ok_or_else(|| format!("unknown parameter {name}"))?;
        let param = model.store.get_mut(id);
        if param.value.shape() != shape.as_slice() {
            return Err(format!("{name}: shape {shape:?}, expected {:?}", param.value.shape()));
        }
        param.value = Tensor::new(shape, data).map_err(|e| format!("{name}: {e}"))?;
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok((model, manifest))
}

pub fn save_checkpoint(path: &Path, model: &SumGanModel, epoch: usize) -> Result<()> {
    fs::write(path, write_checkpoint(model, epoch)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(SumGanModel, CheckpointManifest)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes).map_err(|d| Error::format(path, d))
}
