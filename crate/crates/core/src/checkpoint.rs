//! Checkpoint directory: routed parameter tensors, optimizer moments,
//! configuration and training history. Written to a sibling temporary
//! directory and renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{GraphSet, Model};
use crate::optim::{Adam, AdamState};
use crate::scenario::NUM_SCENARIOS;
use crate::splitter::SplitState;
use crate::trainer::History;

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_LINE: &str = "scenario-hg checkpoint";
const TENSOR_MAGIC: &[u8; 4] = b"SHGT";

pub const FORMAT_FILE: &str = "format.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const REGISTRY_FILE: &str = "registry.tsv";
pub const TENSORS_FILE: &str = "tensors.bin";
pub const OPTIMIZER_FILE: &str = "optimizer.tsv";
pub const HISTORY_FILE: &str = "history.csv";
pub const LOSSES_FILE: &str = "losses.csv";
pub const SPLITS_FILE: &str = "splits.tsv";

/// Named dense tensors in a single little-endian binary file.
pub fn write_tensors(path: &Path, tensors: &[(String, &Array2<f64>)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Incompatible(format!(
                "{} is truncated",
                self.path.display()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
    }
}

pub fn read_tensors(path: &Path) -> Result<BTreeMap<String, Array2<f64>>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != TENSOR_MAGIC {
        return Err(Error::Incompatible(format!("{} is not a tensor file", path.display())));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Incompatible(format!(
            "tensor format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let count = r.u64()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = r.u64()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Incompatible("tensor name is not UTF-8".into()))?;
        let (rows, cols) = (r.u64()?, r.u64()?);
        let data = r
            .take(rows * cols * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Shape(e.to_string()))?;
        out.insert(name, t);
    }
    Ok(out)
}

fn state_field(state: &SplitState) -> String {
    match state {
        SplitState::Shared => "shared".into(),
        SplitState::Split { copy_map } => copy_map
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(","),
    }
}

fn parse_state(field: &str) -> Result<SplitState> {
    if field == "shared" {
        return Ok(SplitState::Shared);
    }
    let copies: Vec<usize> = field
        .split(',')
        .map(|c| c.parse().map_err(|_| Error::Incompatible(format!("bad routing `{field}`"))))
        .collect::<Result<_>>()?;
    let copy_map: [usize; NUM_SCENARIOS] = copies
        .try_into()
        .map_err(|_| Error::Incompatible(format!("routing `{field}` needs {NUM_SCENARIOS} entries")))?;
    Ok(SplitState::Split { copy_map })
}

/// Everything a checkpoint directory holds.
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: Adam,
}

/// Writes `dir` atomically; an existing checkpoint there is replaced.
pub fn save(
    dir: &Path,
    cfg: &TrainConfig,
    model: &Model,
    optimizer: &Adam,
    history: &History,
    extra: &[(&str, String)],
) -> Result<()> {
    let tmp = temp_sibling(dir)?;
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;

    let put = |name: &str, text: &str| -> Result<()> {
        let path = tmp.join(name);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(text.as_bytes())
            .and_then(|_| f.sync_all())
            .map_err(|e| Error::io(&path, e))
    };
    put(FORMAT_FILE, &format!("{FORMAT_LINE} v{FORMAT_VERSION}\n"))?;
    put(CONFIG_FILE, &cfg.to_kv_string())?;

    let reg = &model.registry;
    let mut registry = String::from("id\tname\ttrainable\trouting\tcopies\trows\tcols\n");
    let mut tensors: Vec<(String, &Array2<f64>)> = Vec::new();
    for id in reg.ids() {
        let slot = reg.slot(id);
        let (rows, cols) = slot.copies[0].dim();
        let _ = writeln!(
            registry,
            "{}\t{}\t{}\t{}\t{}\t{rows}\t{cols}",
            id.0,
            slot.name,
            slot.trainable,
            state_field(&slot.state),
            slot.copies.len()
        );
        for (c, t) in slot.copies.iter().enumerate() {
            tensors.push((format!("param/{}/{c}", slot.name), t));
        }
    }
    put(REGISTRY_FILE, &registry)?;

    let mut opt = String::from("name\tcopy\tstep\n");
    for ((id, copy), st) in optimizer.states() {
        let name = reg.name(*id);
        let _ = writeln!(opt, "{name}\t{copy}\t{}", st.step);
        tensors.push((format!("adam/{name}/{copy}/m"), &st.m));
        tensors.push((format!("adam/{name}/{copy}/v"), &st.v));
    }
    put(OPTIMIZER_FILE, &opt)?;
    write_tensors(&tmp.join(TENSORS_FILE), &tensors)?;

    put(HISTORY_FILE, &history.epochs_csv())?;
    put(LOSSES_FILE, &history.steps_csv())?;
    put(SPLITS_FILE, &history.splits_tsv())?;
    for (name, text) in extra {
        put(name, text)?;
    }

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
}

fn temp_sibling(dir: &Path) -> Result<PathBuf> {
    let name = dir
        .file_name()
        .ok_or_else(|| Error::Config(format!("invalid checkpoint path {}", dir.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    Ok(dir.with_file_name(tmp_name))
}

pub fn read_format(dir: &Path) -> Result<u32> {
    let path = dir.join(FORMAT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.trim()
        .strip_prefix(FORMAT_LINE)
        .and_then(|v| v.trim().strip_prefix('v'))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Incompatible(format!("{} is not a checkpoint", dir.display())))
}

pub fn load_config(dir: &Path) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    cfg.apply_file(&dir.join(CONFIG_FILE))?;
    Ok(cfg)
}

/// Restores a checkpoint against the graphs of its prepared corpus. The
/// stored parameter names and shapes must match a freshly built model.
pub fn load(dir: &Path, graphs: &GraphSet) -> Result<Checkpoint> {
    let version = read_format(dir)?;
    if version != FORMAT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint format v{version}, this build reads v{FORMAT_VERSION}"
        )));
    }
    let config = load_config(dir)?;
    if config.no_subgraph != graphs.merged {
        return Err(Error::Incompatible(
            "checkpoint and graph set disagree on merged sub-hypergraphs".into(),
        ));
    }
    let mut model = Model::init(graphs, &config);
    let mut tensors = read_tensors(&dir.join(TENSORS_FILE))?;

    let path = dir.join(REGISTRY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    if rows.len() != model.registry.len() {
        return Err(Error::Incompatible(format!(
            "checkpoint has {} parameters, the model expects {}",
            rows.len(),
            model.registry.len()
        )));
    }
    for f in rows {
        if f.len() != 7 {
            return Err(Error::Incompatible(format!("malformed registry line in {}", path.display())));
        }
        let name = f[1];
        let id = model
            .registry
            .id(name)
            .map_err(|_| Error::Incompatible(format!("checkpoint parameter `{name}` is unknown")))?;
        let copies: usize = f[4]
            .parse()
            .map_err(|_| Error::Incompatible("bad copy count".into()))?;
        let expected = model.registry.slot(id).copies[0].dim();
        let mut values = Vec::with_capacity(copies);
        for c in 0..copies {
            let t = tensors
                .remove(&format!("param/{name}/{c}"))
                .ok_or_else(|| Error::Incompatible(format!("missing tensor for `{name}` copy {c}")))?;
            if t.dim() != expected {
                return Err(Error::Incompatible(format!(
                    "`{name}` has shape {:?}, the model expects {expected:?}",
                    t.dim()
                )));
            }
            values.push(t);
        }
        let slot = model.registry.slot_mut(id);
        slot.copies = values;
        slot.state = parse_state(f[3])?;
        slot.trainable = f[2] == "true";
    }

    let mut optimizer = Adam::new(config.adam());
    let path = dir.join(OPTIMIZER_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Incompatible(format!("malformed optimizer line `{line}`"));
        if f.len() != 3 {
            return Err(bad());
        }
        let id = model.registry.id(f[0]).map_err(|_| bad())?;
        let copy: usize = f[1].parse().map_err(|_| bad())?;
        let step: u64 = f[2].parse().map_err(|_| bad())?;
        let m = tensors.remove(&format!("adam/{}/{copy}/m", f[0])).ok_or_else(bad)?;
        let v = tensors.remove(&format!("adam/{}/{copy}/v", f[0])).ok_or_else(bad)?;
        optimizer.insert_state(id, copy, AdamState { m, v, step });
    }
    Ok(Checkpoint {
        config,
        model,
        optimizer,
    })
}
