//! Binary artifact formats.
//!
//! Every file has the same frame:
//!
//! ```text
//! offset  size  field
//! 0       8     magic (ASCII, one of CALMCKPT / CALMDATA / CALMCRED / CALMMASK)
//! 8       2     format version, u16 little-endian (currently 1)
//! 10      ..    body (layout per kind, below)
//! end-4   4     CRC-32 (IEEE) of every preceding byte, u32 little-endian
//! ```
//!
//! All integers are little-endian; all reals are IEEE-754 binary64
//! little-endian, stored bit-exactly. Strings are a u16 byte length followed by
//! UTF-8 bytes.
//!
//! Model spec descriptor (shared by checkpoints):
//!
//! ```text
//! u32 input_dim | u32 num_classes | u8 activation (0 relu, 1 tanh)
//! u32 hidden layer count | u32 width per hidden layer
//! ```
//!
//! `CALMCKPT`: spec descriptor, u32 vector count, then per vector a name
//! string, u64 element count (must equal the spec's parameter count) and the
//! values.
//!
//! `CALMDATA`: u32 task count, then per task: u32 task id, u32 window start,
//! u32 window length, u32 input width, and the splits train, test and
//! unlabeled, each as u64 rows, `rows * width` reals, `rows` u32 labels and
//! `rows` u32 global sample ids. Unlabeled labels are the withheld audit labels.
//!
//! `CALMCRED`: u32 set count, then per set: u32 task id, u32 class count,
//! u8 mode (0 ems, 1 cb_ems), f64 rate, u32 skipped-class count and that many
//! u32 class ids, u64 sample count and per sample u64 pool index, f64 entropy,
//! u32 pseudo-label.
//!
//! `CALMMASK`: u32 step count, then per step: u32 task id, u64 coordinate
//! count `n`, `ceil(n / 8)` bytes of packed bits (bit `i` is bit `i % 8` of
//! byte `i / 8`, unused high bits zero), u64 trace length `k`, `k` objective
//! values and `k` density values.

use std::fs;
use std::path::Path;

use calm_core::calm::BinaryMask;
use calm_core::nn::{Activation, Batch, ClassWindow, Matrix, ModelSpec, ParamVector};
use calm_core::sampling::{CredibleSet, SamplingMode, ScoredSample};
use calm_core::taskgen::{SplitIds, TaskData, UnlabeledPool};

use crate::error::{BenchError, Result};

pub const FORMAT_VERSION: u16 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CALMCKPT";
pub const DATASET_MAGIC: &[u8; 8] = b"CALMDATA";
pub const CREDIBLE_MAGIC: &[u8; 8] = b"CALMCRED";
pub const MASK_MAGIC: &[u8; 8] = b"CALMMASK";

const HEADER_LEN: usize = 10;
const TRAILER_LEN: usize = 4;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 8]) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Self { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| BenchError::Format(format!("{v} does not fit in u32")))?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn u64(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn reals(&mut self, what: &str, values: &[f64]) -> Result<()> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(BenchError::Format(format!("refusing to save non-finite value {bad} in {what}")));
        }
        for &v in values {
            self.f64(v);
        }
        Ok(())
    }

    fn string(&mut self, s: &str) -> Result<()> {
        let len = u16::try_from(s.len()).map_err(|_| BenchError::Format(format!("name too long: {s}")))?;
        self.u16(len);
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Validates the frame and positions the reader at the body.
    fn open(bytes: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + TRAILER_LEN {
            return Err(BenchError::Format("file truncated before header".into()));
        }
        if &bytes[..8] != magic {
            return Err(BenchError::Format(format!(
                "bad magic: expected {}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&bytes[..8])
            )));
        }
        let version = u16::from_le_bytes([bytes[8], bytes[9]]);
        if version != FORMAT_VERSION {
            return Err(BenchError::Format(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let split = bytes.len() - TRAILER_LEN;
        let stored = u32::from_le_bytes(bytes[split..].try_into().expect("four bytes"));
        if crc32fast::hash(&bytes[..split]) != stored {
            return Err(BenchError::Format("checksum mismatch (corrupt or truncated file)".into()));
        }
        Ok(Self {
            body: &bytes[HEADER_LEN..split],
            pos: 0,
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.body.len());
        match end {
            Some(end) => {
                let out = &self.body[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(BenchError::Format("unexpected end of body".into())),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes"));
        usize::try_from(v).map_err(|_| BenchError::Format(format!("count {v} too large")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| BenchError::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect())
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.u32()).collect()
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| BenchError::Format("name is not UTF-8".into()))
    }

    fn finish(self) -> Result<()> {
        if self.pos == self.body.len() {
            Ok(())
        } else {
            Err(BenchError::Format(format!(
                "{} trailing bytes after body",
                self.body.len() - self.pos
            )))
        }
    }
}

fn write_spec(w: &mut Writer, spec: &ModelSpec) -> Result<()> {
    w.u32(spec.input_dim)?;
    w.u32(spec.num_classes)?;
    w.u8(match spec.activation {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    });
    w.u32(spec.hidden_dims.len())?;
    for &h in &spec.hidden_dims {
        w.u32(h)?;
    }
    Ok(())
}

fn read_spec(r: &mut Reader<'_>) -> Result<ModelSpec> {
    let input_dim = r.u32()?;
    let num_classes = r.u32()?;
    let activation = match r.u8()? {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        other => return Err(BenchError::Format(format!("unknown activation tag {other}"))),
    };
    let layers = r.u32()?;
    let hidden = r.u32s(layers)?;
    Ok(ModelSpec::new(input_dim, hidden, num_classes, activation)?)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))
}

/// A model spec plus named parameter vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub vectors: Vec<(String, ParamVector)>,
}

impl Checkpoint {
    pub fn new(spec: ModelSpec) -> Self {
        Self {
            spec,
            vectors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, params: ParamVector) -> Result<()> {
        params.ensure_bound(&self.spec)?;
        self.vectors.push((name.into(), params));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ParamVector> {
        self.vectors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| BenchError::Format(format!("checkpoint has no vector named {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(CHECKPOINT_MAGIC);
        write_spec(&mut w, &self.spec)?;
        w.u32(self.vectors.len())?;
        for (name, params) in &self.vectors {
            w.string(name)?;
            w.u64(params.len());
            w.reals(name, params.values())?;
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, CHECKPOINT_MAGIC)?;
        let spec = read_spec(&mut r)?;
        let count = r.u32()?;
        let mut ckpt = Checkpoint::new(spec);
        for _ in 0..count {
            let name = r.string()?;
            let n = r.u64()?;
            if n != ckpt.spec.parameter_count() {
                return Err(BenchError::Format(format!(
                    "vector {name:?} has {n} elements, spec needs {}",
                    ckpt.spec.parameter_count()
                )));
            }
            let values = r.reals(n)?;
            let params = ParamVector::from_values(&ckpt.spec, values)?;
            ckpt.vectors.push((name, params));
        }
        r.finish()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

fn write_split(w: &mut Writer, inputs: &Matrix, labels: &[usize], ids: &[u32]) -> Result<()> {
    w.u64(inputs.rows());
    w.reals("dataset", inputs.as_slice())?;
    for &l in labels {
        w.u32(l)?;
    }
    for &id in ids {
        w.u32(id as usize)?;
    }
    Ok(())
}

fn read_split(r: &mut Reader<'_>, width: usize) -> Result<(Matrix, Vec<usize>, Vec<u32>)> {
    let rows = r.u64()?;
    let values = r.reals(rows.checked_mul(width).ok_or_else(|| BenchError::Format("length overflow".into()))?)?;
    let labels = r.u32s(rows)?;
    let ids = r.u32s(rows)?.into_iter().map(|v| v as u32).collect();
    Ok((Matrix::new(rows, width, values)?, labels, ids))
}

pub fn dataset_to_bytes(tasks: &[TaskData]) -> Result<Vec<u8>> {
    let mut w = Writer::new(DATASET_MAGIC);
    w.u32(tasks.len())?;
    for t in tasks {
        w.u32(t.task_id)?;
        w.u32(t.window.start)?;
        w.u32(t.window.len)?;
        w.u32(t.train.inputs.cols())?;
        let labels = |b: &Batch| -> Result<Vec<usize>> {
            b.labels
                .clone()
                .ok_or_else(|| BenchError::Format("labeled split without labels".into()))
        };
        write_split(&mut w, &t.train.inputs, &labels(&t.train)?, &t.ids.train)?;
        write_split(&mut w, &t.test.inputs, &labels(&t.test)?, &t.ids.test)?;
        write_split(&mut w, t.unlabeled.inputs(), t.unlabeled.audit_labels(), &t.ids.unlabeled)?;
    }
    Ok(w.finish())
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Vec<TaskData>> {
    let mut r = Reader::open(bytes, DATASET_MAGIC)?;
    let count = r.u32()?;
    let mut tasks = Vec::with_capacity(count);
    for _ in 0..count {
        let task_id = r.u32()?;
        let window = ClassWindow {
            start: r.u32()?,
            len: r.u32()?,
        };
        let width = r.u32()?;
        let (train_x, train_y, train_ids) = read_split(&mut r, width)?;
        let (test_x, test_y, test_ids) = read_split(&mut r, width)?;
        let (unl_x, unl_y, unl_ids) = read_split(&mut r, width)?;
        tasks.push(TaskData {
            task_id,
            window,
            train: Batch::labeled(train_x, train_y)?,
            test: Batch::labeled(test_x, test_y)?,
            unlabeled: UnlabeledPool::new(unl_x, unl_y)?,
            ids: SplitIds {
                train: train_ids,
                test: test_ids,
                unlabeled: unl_ids,
            },
        });
    }
    r.finish()?;
    Ok(tasks)
}

pub fn credible_to_bytes(sets: &[CredibleSet]) -> Result<Vec<u8>> {
    let mut w = Writer::new(CREDIBLE_MAGIC);
    w.u32(sets.len())?;
    for set in sets {
        w.u32(set.task_id())?;
        w.u32(set.num_classes())?;
        w.u8(match set.mode() {
            SamplingMode::Ems => 0,
            SamplingMode::CbEms => 1,
        });
        w.f64(set.rate());
        w.u32(set.skipped_classes().len())?;
        for &c in set.skipped_classes() {
            w.u32(c)?;
        }
        w.u64(set.len());
        for s in set.samples() {
            w.u64(s.index);
            w.reals("credible set", &[s.entropy])?;
            w.u32(s.pseudo_label)?;
        }
    }
    Ok(w.finish())
}

pub fn credible_from_bytes(bytes: &[u8]) -> Result<Vec<CredibleSet>> {
    let mut r = Reader::open(bytes, CREDIBLE_MAGIC)?;
    let count = r.u32()?;
    let mut sets = Vec::with_capacity(count);
    for _ in 0..count {
        let task_id = r.u32()?;
        let num_classes = r.u32()?;
        let mode = match r.u8()? {
            0 => SamplingMode::Ems,
            1 => SamplingMode::CbEms,
            other => return Err(BenchError::Format(format!("unknown sampling mode tag {other}"))),
        };
        let rate = r.f64()?;
        let skipped_len = r.u32()?;
        let skipped = r.u32s(skipped_len)?;
        let n = r.u64()?;
        let samples = (0..n)
            .map(|_| {
                Ok(ScoredSample {
                    index: r.u64()?,
                    entropy: r.f64()?,
                    pseudo_label: r.u32()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        sets.push(CredibleSet::from_parts(task_id, num_classes, samples, rate, mode)?.with_skipped_classes(skipped)?);
    }
    r.finish()?;
    Ok(sets)
}

/// One persisted sequential step: the rounded mask and its optimization traces.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecord {
    pub task_id: usize,
    pub mask: BinaryMask,
    pub objective_trace: Vec<f64>,
    pub density_trace: Vec<f64>,
}

pub fn masks_to_bytes(records: &[MaskRecord]) -> Result<Vec<u8>> {
    let mut w = Writer::new(MASK_MAGIC);
    w.u32(records.len())?;
    for rec in records {
        if rec.objective_trace.len() != rec.density_trace.len() {
            return Err(BenchError::Format("objective and density traces differ in length".into()));
        }
        w.u32(rec.task_id)?;
        w.u64(rec.mask.len());
        let mut packed = vec![0u8; rec.mask.len().div_ceil(8)];
        for (i, &b) in rec.mask.bits().iter().enumerate() {
            if b {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        w.buf.extend_from_slice(&packed);
        w.u64(rec.objective_trace.len());
        w.reals("objective trace", &rec.objective_trace)?;
        w.reals("density trace", &rec.density_trace)?;
    }
    Ok(w.finish())
}

pub fn masks_from_bytes(bytes: &[u8]) -> Result<Vec<MaskRecord>> {
    let mut r = Reader::open(bytes, MASK_MAGIC)?;
    let count = r.u32()?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let task_id = r.u32()?;
        let n = r.u64()?;
        let packed = r.take(n.div_ceil(8))?;
        if n % 8 != 0 && packed[n / 8] >> (n % 8) != 0 {
            return Err(BenchError::Format("nonzero padding bits in mask".into()));
        }
        let bits = (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
        let k = r.u64()?;
        let objective_trace = r.reals(k)?;
        let density_trace = r.reals(k)?;
        records.push(MaskRecord {
            task_id,
            mask: BinaryMask::from_bits(bits),
            objective_trace,
            density_trace,
        });
    }
    r.finish()?;
    Ok(records)
}
