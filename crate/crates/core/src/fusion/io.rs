//! Checkpoint files.
//!
//! A checkpoint directory holds `topology.txt`, the network topology and gate
//! as `key = value` lines, and `params.bin`, the parameters as little-endian
//! `f64` data behind a shape table:
//!
//! ```text
//! "FUSP1"            magic
//! u32                tensor count
//! per tensor:        u32 rank, rank × u32 extents, u64 byte offset into the data block
//! data block         all tensors, f64 little-endian, in topology order
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::gate::Gate;
use super::network::Model;
use super::params::{parameter_layout, ParameterSet};
use super::spec::{Architecture, LayerSpec, NetworkSpec};
use crate::kv;
use crate::tensor::Tensor;
use crate::{Error, Result};

const PARAM_MAGIC: &[u8; 5] = b"FUSP1";
pub const TOPOLOGY_FILE: &str = "topology.txt";
pub const PARAMS_FILE: &str = "params.bin";

fn layers_to_text(layers: &[LayerSpec]) -> String {
    layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", ")
}

fn layers_from_text(s: &str) -> Result<Vec<LayerSpec>> {
    s.split(',').map(|p| p.trim().parse()).collect()
}

fn gate_to_text(gate: &Gate) -> String {
    match gate {
        Gate::Sigmoid => "sigmoid".into(),
        Gate::Fixed(w) if w.is_empty() => "none".into(),
        Gate::Fixed(w) => format!(
            "fixed {}",
            w.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
        ),
    }
}

fn gate_from_text(s: &str) -> Result<Gate> {
    let mut parts = s.split_whitespace();
    match parts.next() {
        Some("sigmoid") => Ok(Gate::Sigmoid),
        Some("none") => Ok(Gate::Fixed(Vec::new())),
        Some("fixed") => parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Gate::Fixed)
            .map_err(|_| Error::format(0, format!("bad fixed gate `{s}`"))),
        _ => Err(Error::format(0, format!("unknown gate `{s}`"))),
    }
}

pub fn topology_to_text(spec: &NetworkSpec, gate: &Gate) -> String {
    format!(
        "# posefuse network topology\n\
         joints = {}\nheight = {}\nwidth = {}\nimage_channels = {}\noutput_scale = {:?}\n\
         architecture = {}\nimage_layers = {}\ncmap_layers = {}\nfusion_layers = {}\ngate = {}\n",
        spec.joints,
        spec.height,
        spec.width,
        spec.image_channels,
        spec.output_scale,
        spec.architecture,
        layers_to_text(&spec.image_layers),
        layers_to_text(&spec.cmap_layers),
        layers_to_text(&spec.fusion_layers),
        gate_to_text(gate),
    )
}

pub fn topology_from_text(text: &str) -> Result<(NetworkSpec, Gate)> {
    let pairs = kv::parse(text)?;
    let spec = NetworkSpec {
        joints: kv::parse_value(&pairs, "joints")?,
        height: kv::parse_value(&pairs, "height")?,
        width: kv::parse_value(&pairs, "width")?,
        image_channels: kv::parse_value(&pairs, "image_channels")?,
        output_scale: kv::parse_value(&pairs, "output_scale")?,
        architecture: kv::lookup(&pairs, "architecture")?.parse::<Architecture>()?,
        image_layers: layers_from_text(kv::lookup(&pairs, "image_layers")?)?,
        cmap_layers: layers_from_text(kv::lookup(&pairs, "cmap_layers")?)?,
        fusion_layers: layers_from_text(kv::lookup(&pairs, "fusion_layers")?)?,
    };
    let gate = gate_from_text(kv::lookup(&pairs, "gate")?)?;
    spec.validate()?;
    Ok((spec, gate))
}

pub fn params_to_bytes(params: &ParameterSet) -> Vec<u8> {
    let mut table = Vec::new();
    let mut data = Vec::new();
    table.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, t) in params.iter() {
        table.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            table.extend_from_slice(&(d as u32).to_le_bytes());
        }
        table.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = PARAM_MAGIC.to_vec();
    out.extend(table);
    out.extend(data);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a parameter file against the names and shapes `spec` and `gate`
/// require.
pub fn params_from_bytes(bytes: &[u8], spec: &NetworkSpec, gate: &Gate) -> Result<ParameterSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(PARAM_MAGIC.len())? != PARAM_MAGIC {
        return Err(Error::format(0, "not a parameter file (bad magic)"));
    }
    let count = r.u32()? as usize;
    let layout = parameter_layout(spec, gate)?;
    if count != layout.len() {
        return Err(Error::format(
            PARAM_MAGIC.len() as u64,
            format!("{count} tensors stored, topology needs {}", layout.len()),
        ));
    }
    let mut table = Vec::with_capacity(count);
    for (name, shape) in &layout {
        let at = r.pos as u64;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::format(at, format!("implausible rank {rank} for `{name}`")));
        }
        let extents = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &extents != shape {
            return Err(Error::format(
                at,
                format!("`{name}` stored as {extents:?}, topology needs {shape:?}"),
            ));
        }
        table.push((name.clone(), extents, r.u64()?));
    }
    let data_start = r.pos;
    let mut set = ParameterSet::new();
    for (name, shape, offset) in table {
        let n: usize = shape.iter().product();
        let start = data_start + offset as usize;
        r.pos = start;
        let raw = r.take(8 * n)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, values)?;
        t.check_finite(&name)?;
        set.insert(name, t);
    }
    Ok(set)
}

impl Model {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let topo = dir.join(TOPOLOGY_FILE);
        fs::write(&topo, topology_to_text(&self.spec, &self.gate)).map_err(|e| Error::io(&topo, e))?;
        let params = dir.join(PARAMS_FILE);
        fs::write(&params, params_to_bytes(&self.params)).map_err(|e| Error::io(&params, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Model> {
        let topo: PathBuf = dir.join(TOPOLOGY_FILE);
        let text = fs::read_to_string(&topo).map_err(|e| Error::io(&topo, e))?;
        let (spec, gate) = topology_from_text(&text)?;
        let path = dir.join(PARAMS_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let params = params_from_bytes(&bytes, &spec, &gate)?;
        Model::new(spec, gate, params)
    }
}
