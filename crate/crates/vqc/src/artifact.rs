//! Binary artifact schema shared by checkpoints, dataset exports, and raw
//! dumps: magic `VQC1`, format version, an endianness probe, then
//! section-tagged payloads of little-endian 64-bit values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::codebook::{Assignment, Codebook};
use crate::error::{Result, VqcError};
use crate::numcore::{LinearLayer, Matrix, Mlp};
use crate::synthdata::{GaussianMixtureDataset, MixtureSpec, StandardScaler};
use crate::vqvae::VqVae;

pub const MAGIC: &[u8; 4] = b"VQC1";
pub const VERSION: u32 = 1;
/// Written little-endian; a reader on the wrong byte order sees garbage.
pub const ENDIAN_PROBE: u32 = 0x0102_0304;

struct ArtifactWriter<W: Write> {
    w: W,
}

impl<W: Write> ArtifactWriter<W> {
    fn new(mut w: W, kind: &[u8; 4]) -> Result<Self> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&ENDIAN_PROBE.to_le_bytes())?;
        w.write_all(kind)?;
        Ok(ArtifactWriter { w })
    }

    fn tag(&mut self, tag: &[u8; 4]) -> Result<()> {
        Ok(self.w.write_all(tag)?)
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.w.write_all(&v.to_le_bytes())?)
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.w.write_all(&v.to_le_bytes())?)
    }

    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }

    fn u64s(&mut self, vs: &[u64]) -> Result<()> {
        self.u64(vs.len() as u64)?;
        for &v in vs {
            self.u64(v)?;
        }
        Ok(())
    }

    fn vec(&mut self, vs: &[f64]) -> Result<()> {
        self.u64(vs.len() as u64)?;
        self.f64s(vs)
    }

    fn matrix(&mut self, m: &Matrix) -> Result<()> {
        self.u64(m.rows() as u64)?;
        self.u64(m.cols() as u64)?;
        self.f64s(m.as_slice())
    }
}

struct ArtifactReader<R: Read> {
    r: R,
}

impl<R: Read> ArtifactReader<R> {
    fn new(mut r: R, kind: &[u8; 4]) -> Result<Self> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        if &buf != MAGIC {
            return Err(VqcError::Format("bad magic (not a VQC1 artifact)".into()));
        }
        r.read_exact(&mut buf)?;
        let version = u32::from_le_bytes(buf);
        if version != VERSION {
            return Err(VqcError::Format(format!("unsupported version {version}")));
        }
        r.read_exact(&mut buf)?;
        if u32::from_le_bytes(buf) != ENDIAN_PROBE {
            return Err(VqcError::Format("endianness marker mismatch".into()));
        }
        r.read_exact(&mut buf)?;
        if &buf != kind {
            return Err(VqcError::Format(format!(
                "artifact kind mismatch: expected {:?}, found {:?}",
                String::from_utf8_lossy(kind),
                String::from_utf8_lossy(&buf)
            )));
        }
        Ok(ArtifactReader { r })
    }

    fn expect_tag(&mut self, tag: &[u8; 4]) -> Result<()> {
        let mut buf = [0u8; 4];
        self.r.read_exact(&mut buf)?;
        if &buf != tag {
            return Err(VqcError::Format(format!(
                "section mismatch: expected {:?}, found {:?}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(&buf)
            )));
        }
        Ok(())
    }

    fn u64(&mut self) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.r.read_exact(&mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut buf = [0u8; 8];
        self.r.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn u64s(&mut self) -> Result<Vec<u64>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.u64()?);
        }
        Ok(out)
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        self.f64s(n)
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        Ok(Matrix::from_vec(rows, cols, self.f64s(rows * cols)?))
    }
}

fn write_mlp<W: Write>(w: &mut ArtifactWriter<W>, net: &Mlp) -> Result<()> {
    w.u64(net.step_count())?;
    w.u64(net.layers().len() as u64)?;
    for layer in net.layers() {
        w.matrix(layer.weight())?;
        w.vec(layer.bias())?;
        w.matrix(&layer.m_weight)?;
        w.matrix(&layer.v_weight)?;
        w.vec(&layer.m_bias)?;
        w.vec(&layer.v_bias)?;
    }
    Ok(())
}

fn read_mlp<R: Read>(r: &mut ArtifactReader<R>) -> Result<Mlp> {
    let step = r.u64()?;
    let n_layers = r.u64()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let weight = r.matrix()?;
        let bias = r.vec()?;
        let mut layer = LinearLayer::from_params(weight, bias);
        layer.m_weight = r.matrix()?;
        layer.v_weight = r.matrix()?;
        layer.m_bias = r.vec()?;
        layer.v_bias = r.vec()?;
        layers.push(layer);
    }
    Ok(Mlp::from_layers(layers, step))
}

/// Save a full model checkpoint: encoder, decoder, codebook, optimizer state.
pub fn save_checkpoint(path: &Path, model: &VqVae) -> Result<()> {
    let file = File::create(path)?;
    let mut w = ArtifactWriter::new(BufWriter::new(file), b"CKPT")?;
    w.tag(b"META")?;
    w.f64(model.beta)?;
    w.u64(model.token_dim as u64)?;
    w.tag(b"ENC ")?;
    write_mlp(&mut w, &model.encoder)?;
    w.tag(b"DEC ")?;
    write_mlp(&mut w, &model.decoder)?;
    w.tag(b"CODE")?;
    w.u64(model.codebook.size() as u64)?;
    w.u64(model.codebook.dim() as u64)?;
    w.f64(model.codebook.gamma())?;
    w.u64(u64::from(model.codebook.is_initialized()))?;
    w.matrix(model.codebook.tokens())?;
    w.matrix(model.codebook.ema_sum())?;
    w.f64s(model.codebook.ema_count())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<VqVae> {
    let file = File::open(path)?;
    let mut r = ArtifactReader::new(BufReader::new(file), b"CKPT")?;
    r.expect_tag(b"META")?;
    let beta = r.f64()?;
    let token_dim = r.u64()? as usize;
    r.expect_tag(b"ENC ")?;
    let encoder = read_mlp(&mut r)?;
    r.expect_tag(b"DEC ")?;
    let decoder = read_mlp(&mut r)?;
    r.expect_tag(b"CODE")?;
    let s = r.u64()? as usize;
    let d = r.u64()? as usize;
    let gamma = r.f64()?;
    let initialized = r.u64()? != 0;
    let tokens = r.matrix()?;
    let ema_sum = r.matrix()?;
    let ema_count = r.f64s(s)?;
    if tokens.rows() != s || tokens.cols() != d {
        return Err(VqcError::Format("codebook shape mismatch".into()));
    }
    let codebook = Codebook::from_state(tokens, ema_sum, ema_count, gamma, initialized);
    VqVae::from_parts(encoder, decoder, codebook, beta, token_dim)
}

/// Export a generated dataset: spec header, scaler, scaled samples, labels.
pub fn save_dataset(path: &Path, ds: &GaussianMixtureDataset) -> Result<()> {
    let file = File::create(path)?;
    let mut w = ArtifactWriter::new(BufWriter::new(file), b"DSET")?;
    w.tag(b"SPEC")?;
    w.u64(ds.spec.n_clusters as u64)?;
    w.u64(ds.spec.points_per_cluster as u64)?;
    w.u64(ds.spec.dim as u64)?;
    w.u64(ds.spec.seed)?;
    w.f64(ds.spec.cluster_std)?;
    w.matrix(&ds.spec.cluster_means)?;
    w.tag(b"SCAL")?;
    w.vec(&ds.scaler.means)?;
    w.vec(&ds.scaler.stds)?;
    w.tag(b"DATA")?;
    w.matrix(&ds.samples)?;
    w.u64s(&ds.labels.iter().map(|&l| l as u64).collect::<Vec<_>>())?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<GaussianMixtureDataset> {
    let file = File::open(path)?;
    let mut r = ArtifactReader::new(BufReader::new(file), b"DSET")?;
    r.expect_tag(b"SPEC")?;
    let n_clusters = r.u64()? as usize;
    let points_per_cluster = r.u64()? as usize;
    let dim = r.u64()? as usize;
    let seed = r.u64()?;
    let cluster_std = r.f64()?;
    let cluster_means = r.matrix()?;
    r.expect_tag(b"SCAL")?;
    let means = r.vec()?;
    let stds = r.vec()?;
    r.expect_tag(b"DATA")?;
    let samples = r.matrix()?;
    let labels = r.u64s()?.into_iter().map(|l| l as usize).collect();
    Ok(GaussianMixtureDataset {
        samples,
        labels,
        scaler: StandardScaler { means, stds },
        spec: MixtureSpec {
            n_clusters,
            points_per_cluster,
            dim,
            cluster_means,
            cluster_std,
            seed,
        },
    })
}

/// Raw dump for external plotting: encoder embeddings, codebook tokens, and
/// the token assignment of each embedding chunk.
pub fn save_dump(
    path: &Path,
    embeddings: &Matrix,
    tokens: &Matrix,
    assignment: &Assignment,
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = ArtifactWriter::new(BufWriter::new(file), b"DUMP")?;
    w.tag(b"EMBD")?;
    w.matrix(embeddings)?;
    w.tag(b"TOKS")?;
    w.matrix(tokens)?;
    w.tag(b"ASGN")?;
    w.u64s(&assignment.0.iter().map(|&k| k as u64).collect::<Vec<_>>())?;
    Ok(())
}

pub fn load_dump(path: &Path) -> Result<(Matrix, Matrix, Assignment)> {
    let file = File::open(path)?;
    let mut r = ArtifactReader::new(BufReader::new(file), b"DUMP")?;
    r.expect_tag(b"EMBD")?;
    let embeddings = r.matrix()?;
    r.expect_tag(b"TOKS")?;
    let tokens = r.matrix()?;
    r.expect_tag(b"ASGN")?;
    let assignment = Assignment(r.u64s()?.into_iter().map(|k| k as usize).collect());
    Ok((embeddings, tokens, assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, MixtureSpec};
    use crate::vqvae::{train_vqvae, TrainConfig, VqVae};

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&MixtureSpec::with_shape(4, 60, 2, 1)).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 32,
            codebook_size: 8,
            hidden_dim: 8,
            ..Default::default()
        };
        let rows: Vec<usize> = (0..ds.n_samples()).collect();
        let mut model = VqVae::new(2, &cfg).unwrap();
        train_vqvae(&mut model, &ds, &rows, &cfg).unwrap();

        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        assert_eq!(loaded.beta, model.beta);
        assert_eq!(loaded.token_dim, model.token_dim);
        assert_eq!(loaded.encoder.step_count(), model.encoder.step_count());
        for (a, b) in loaded.encoder.layers().iter().zip(model.encoder.layers()) {
            assert_eq!(a.weight().as_slice(), b.weight().as_slice());
            assert_eq!(a.bias(), b.bias());
            assert_eq!(a.m_weight.as_slice(), b.m_weight.as_slice());
            assert_eq!(a.v_bias, b.v_bias);
        }
        assert_eq!(loaded.codebook.tokens().as_slice(), model.codebook.tokens().as_slice());
        assert_eq!(loaded.codebook.ema_count(), model.codebook.ema_count());

        // evaluation reproduces exactly
        let (_, test) = ds.train_test_split(cfg.seed);
        let a = crate::diagnostics::evaluate(&model, &ds, &test).unwrap();
        let b = crate::diagnostics::evaluate(&loaded, &ds, &test).unwrap();
        assert_eq!(a.test_mse.to_bits(), b.test_mse.to_bits());
        assert_eq!(a.codebook_perplexity.to_bits(), b.codebook_perplexity.to_bits());
        assert_eq!(a.usage_histogram, b.usage_histogram);
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&MixtureSpec::with_shape(3, 40, 3, 9)).unwrap();
        let path = dir.path().join("data.dset");
        save_dataset(&path, &ds).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.samples.as_slice(), ds.samples.as_slice());
        assert_eq!(loaded.labels, ds.labels);
        assert_eq!(loaded.scaler.means, ds.scaler.means);
        assert_eq!(loaded.spec.cluster_means.as_slice(), ds.spec.cluster_means.as_slice());
        assert_eq!(loaded.spec.seed, 9);
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let e = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let t = Matrix::from_rows(&[vec![0.5, 0.5]]);
        let a = Assignment(vec![0, 0]);
        let path = dir.path().join("raw.dump");
        save_dump(&path, &e, &t, &a).unwrap();
        let (e2, t2, a2) = load_dump(&path).unwrap();
        assert_eq!(e2.as_slice(), e.as_slice());
        assert_eq!(t2.as_slice(), t.as_slice());
        assert_eq!(a2, a);
    }

    #[test]
    fn wrong_kind_and_bad_magic_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&MixtureSpec::with_shape(2, 20, 2, 0)).unwrap();
        let path = dir.path().join("data.dset");
        save_dataset(&path, &ds).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(VqcError::Format(_))));

        let junk = dir.path().join("junk");
        std::fs::write(&junk, b"not an artifact").unwrap();
        assert!(matches!(load_dataset(&junk), Err(VqcError::Format(_))));
    }
}
