//! Versioned binary model file for [`TrainedPipeline`].
//!
//! All integers are little-endian; `f64` values are stored as their IEEE-754
//! bit patterns so a reloaded pipeline predicts bit for bit like the saved
//! one. The byte layout is documented in `docs/model-format.md`.

use std::fs;
use std::path::Path;

use crate::data::{validate_schema, ColumnStats, PreprocessMode, PreprocessStats, ViewSchema};
use crate::error::{Error, Result};
use crate::latent::{
    ClassPrototypes, LatentCodes, PrototypeRefresh, ReconReduction, ReconstructionBank,
    RepresentationConfig, StructuredLossConfig,
};
use crate::matrix::Matrix;
use crate::nn::{Activation, DenseNet, Layer};
use crate::pipeline::{
    ClassifierConfig, ClassifierInput, LatentClassifier, PipelineConfig, TrainedPipeline,
};
use crate::regressor::{LatentRegressor, RegressorConfig};

pub const MAGIC: &[u8; 8] = b"MVLTPIPE";
pub const FORMAT_VERSION: u32 = 1;

pub fn save(pipe: &TrainedPipeline, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(pipe))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainedPipeline> {
    from_bytes(&fs::read(path)?)
}

pub fn to_bytes(pipe: &TrainedPipeline) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    write_config(&mut w, &pipe.config);

    w.u32(pipe.schema.len() as u32);
    for v in &pipe.schema {
        w.str(&v.name);
        w.u64(v.dim as u64);
    }

    w.u8(pipe.stats.mode.tag());
    for view in &pipe.stats.views {
        for c in view {
            w.f64(c.location);
            w.f64(c.spread);
            w.u8(c.constant as u8);
        }
    }

    w.u32(pipe.bank.nets().len() as u32);
    for net in pipe.bank.nets() {
        write_net(&mut w, net);
    }
    write_net(&mut w, pipe.regressor.net());
    write_net(&mut w, pipe.classifier.net());

    write_matrix(&mut w, pipe.codes.matrix());
    for c in 0..2 {
        w.u64(pipe.prototypes.counts[c] as u64);
        w.u64(pipe.prototypes.means[c].len() as u64);
        pipe.prototypes.means[c].iter().for_each(|&v| w.f64(v));
    }
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainedPipeline> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a pipeline model (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let config = read_config(&mut r)?;

    let n_views = r.u32()? as usize;
    let mut schema = Vec::with_capacity(n_views.min(1024));
    for _ in 0..n_views {
        let name = r.str()?;
        let dim = r.usize()?;
        schema.push(ViewSchema::new(name, dim));
    }
    validate_schema(&schema).map_err(format_error)?;

    let mode = preprocess_from_tag(r.u8()?)?;
    let mut views = Vec::with_capacity(schema.len());
    for v in &schema {
        let mut cols = Vec::with_capacity(v.dim.min(1 << 16));
        for _ in 0..v.dim {
            cols.push(ColumnStats {
                location: r.f64()?,
                spread: r.f64()?,
                constant: r.bool()?,
            });
        }
        views.push(cols);
    }
    let stats = PreprocessStats { mode, views };

    let n_nets = r.u32()? as usize;
    if n_nets != schema.len() {
        return Err(Error::Format(format!(
            "{n_nets} reconstruction networks for {} views",
            schema.len()
        )));
    }
    let nets = (0..n_nets)
        .map(|_| read_net(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let bank = ReconstructionBank::from_nets(nets).map_err(format_error)?;
    let regressor = LatentRegressor::from_net(read_net(&mut r)?).map_err(format_error)?;
    let classifier = LatentClassifier::from_net(read_net(&mut r)?).map_err(format_error)?;

    let codes = LatentCodes::new(read_matrix(&mut r)?).map_err(format_error)?;
    let mut counts = [0usize; 2];
    let mut means = [Vec::new(), Vec::new()];
    for c in 0..2 {
        counts[c] = r.usize()?;
        let len = r.usize()?;
        means[c] = r.f64s(len)?;
    }
    let prototypes = ClassPrototypes { means, counts };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    let pipe = TrainedPipeline {
        schema,
        stats,
        bank,
        codes,
        prototypes,
        regressor,
        classifier,
        config,
    };
    check_consistency(&pipe)?;
    Ok(pipe)
}

fn check_consistency(p: &TrainedPipeline) -> Result<()> {
    let d = p.regressor.latent_dim();
    let total: usize = p.schema.iter().map(|v| v.dim).sum();
    let problems = [
        (
            p.regressor.input_dim() != total,
            "regressor input differs from the feature count",
        ),
        (
            p.classifier.latent_dim() != d,
            "classifier input differs from the latent dimension",
        ),
        (
            p.bank.latent_dim() != d,
            "reconstruction input differs from the latent dimension",
        ),
        (
            p.bank.view_dims() != p.schema.iter().map(|v| v.dim).collect::<Vec<_>>(),
            "reconstruction outputs differ from the view dimensions",
        ),
        (p.codes.dim() != d, "stored codes have the wrong dimension"),
        (
            p.prototypes.dim() != d || p.prototypes.means[1].len() != d,
            "prototypes have the wrong dimension",
        ),
        (
            p.config.representation.latent_dim != d,
            "configured latent dimension differs from the networks",
        ),
        (
            p.stats.mode != p.config.preprocess,
            "fitted statistics use a different preprocessing mode than the config",
        ),
        (
            p.stats.views.len() != p.schema.len()
                || p.stats.views.iter().zip(&p.schema).any(|(s, v)| s.len() != v.dim),
            "preprocessing statistics do not match the view dimensions",
        ),
    ];
    match problems.iter().find(|(bad, _)| *bad) {
        Some((_, msg)) => Err(Error::Format((*msg).into())),
        None => Ok(()),
    }
}

fn format_error(e: Error) -> Error {
    Error::Format(e.to_string())
}

// ---------------------------------------------------------------------------
// Sections
// ---------------------------------------------------------------------------

fn write_config(w: &mut Writer, c: &PipelineConfig) {
    w.u8(c.preprocess.tag());
    w.u64(c.seed);
    let r = &c.representation;
    w.u64(r.latent_dim as u64);
    w.f64(r.lambda);
    w.f64(r.structured.margin);
    w.u64(r.epochs as u64);
    w.f64(r.net_step_size);
    w.f64(r.code_step_size);
    w.f64(r.init_std);
    w.opt_usize(r.batch_size);
    w.u8(match r.reduction {
        ReconReduction::ComponentMean => 0,
        ReconReduction::Sum => 1,
    });
    w.u8(match r.prototype_refresh {
        PrototypeRefresh::PerEpoch => 0,
        PrototypeRefresh::PerStep => 1,
    });
    let g = &c.regressor;
    w.u64(g.hidden as u64);
    w.u64(g.epochs as u64);
    w.f64(g.step_size);
    w.opt_usize(g.batch_size);
    let k = &c.classifier;
    w.u64(k.hidden as u64);
    w.u64(k.epochs as u64);
    w.f64(k.step_size);
    w.opt_usize(k.batch_size);
    w.u8(match k.input {
        ClassifierInput::Regressed => 0,
        ClassifierInput::Codes => 1,
    });
}

fn read_config(r: &mut Reader) -> Result<PipelineConfig> {
    let preprocess = preprocess_from_tag(r.u8()?)?;
    let seed = r.u64()?;
    let representation = RepresentationConfig {
        latent_dim: r.usize()?,
        lambda: r.f64()?,
        structured: StructuredLossConfig { margin: r.f64()? },
        epochs: r.usize()?,
        net_step_size: r.f64()?,
        code_step_size: r.f64()?,
        init_std: r.f64()?,
        batch_size: r.opt_usize()?,
        reduction: match r.u8()? {
            0 => ReconReduction::ComponentMean,
            1 => ReconReduction::Sum,
            t => return Err(Error::Format(format!("unknown reduction tag {t}"))),
        },
        prototype_refresh: match r.u8()? {
            0 => PrototypeRefresh::PerEpoch,
            1 => PrototypeRefresh::PerStep,
            t => return Err(Error::Format(format!("unknown prototype refresh tag {t}"))),
        },
    };
    let regressor = RegressorConfig {
        hidden: r.usize()?,
        epochs: r.usize()?,
        step_size: r.f64()?,
        batch_size: r.opt_usize()?,
    };
    let classifier = ClassifierConfig {
        hidden: r.usize()?,
        epochs: r.usize()?,
        step_size: r.f64()?,
        batch_size: r.opt_usize()?,
        input: match r.u8()? {
            0 => ClassifierInput::Regressed,
            1 => ClassifierInput::Codes,
            t => return Err(Error::Format(format!("unknown classifier input tag {t}"))),
        },
    };
    Ok(PipelineConfig {
        preprocess,
        representation,
        regressor,
        classifier,
        seed,
    })
}

fn preprocess_from_tag(t: u8) -> Result<PreprocessMode> {
    PreprocessMode::from_tag(t)
        .ok_or_else(|| Error::Format(format!("unknown preprocessing tag {t}")))
}

fn write_net(w: &mut Writer, net: &DenseNet) {
    w.u32(net.layers().len() as u32);
    for l in net.layers() {
        w.u64(l.in_dim() as u64);
        w.u64(l.out_dim() as u64);
        w.u8(l.activation().tag());
        l.weights().iter().for_each(|&v| w.f64(v));
        l.biases().iter().for_each(|&v| w.f64(v));
    }
}

fn read_net(r: &mut Reader) -> Result<DenseNet> {
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(64));
    for _ in 0..n_layers {
        let in_dim = r.usize()?;
        let out_dim = r.usize()?;
        let tag = r.u8()?;
        let act = Activation::from_tag(tag)
            .ok_or_else(|| Error::Format(format!("unknown activation tag {tag}")))?;
        let n_weights = in_dim
            .checked_mul(out_dim)
            .ok_or_else(|| Error::Format("layer size overflows".into()))?;
        let weights = r.f64s(n_weights)?;
        let biases = r.f64s(out_dim)?;
        layers.push(Layer::new(in_dim, out_dim, weights, biases, act).map_err(format_error)?);
    }
    DenseNet::from_layers(layers).map_err(format_error)
}

fn write_matrix(w: &mut Writer, m: &Matrix) {
    w.u64(m.rows() as u64);
    w.u64(m.cols() as u64);
    m.as_slice().iter().for_each(|&v| w.f64(v));
}

fn read_matrix(r: &mut Reader) -> Result<Matrix> {
    let rows = r.usize()?;
    let cols = r.usize()?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
    Matrix::from_vec(rows, cols, r.f64s(n)?).map_err(format_error)
}

// ---------------------------------------------------------------------------
// Primitive encoding
// ---------------------------------------------------------------------------

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    /// Flag byte, then the value when present.
    fn opt_usize(&mut self, v: Option<usize>) {
        match v {
            None => self.u8(0),
            Some(n) => {
                self.u8(1);
                self.u64(n as u64);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            t => Err(Error::Format(format!("invalid flag byte {t}"))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("size {v} does not fit in memory")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    /// Reads `n` values, checking the length against the remaining bytes
    /// before allocating.
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("length overflows".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("view name is not UTF-8".into()))
    }

    fn opt_usize(&mut self) -> Result<Option<usize>> {
        Ok(if self.bool()? {
            Some(self.usize()?)
        } else {
            None
        })
    }
}
