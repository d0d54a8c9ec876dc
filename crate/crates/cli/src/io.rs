//! File formats: header + raw volumes, curve tables, truth tables, parameter
//! maps (CSV and binary PGM). Outputs are staged in memory and committed with
//! write-to-temp-then-rename.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};

use ivimfit::model::{AcquisitionScheme, IvimParams};
use ivimfit::pipeline::VoxelVolume;

/// Files to be written together once every one of them has been produced.
#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    pub fn add_text(&mut self, path: PathBuf, text: String) {
        self.add(path, text.into_bytes());
    }

    pub fn commit(self) -> Result<()> {
        for (path, bytes) in self.files {
            write_atomic(&path, &bytes)?;
        }
        Ok(())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn join_f64(values: &[f64], sep: &str) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(sep)
}

/// Header text and raw body of a volume. Masked-out voxels are stored as NaN.
pub fn encode_volume(v: &VoxelVolume) -> (String, Vec<u8>) {
    let [nx, ny, nz] = v.dims();
    let header = format!(
        "dims = {nx} {ny} {nz}\nn_bvalues = {}\nbvalues = {}\ndtype = float32\nendianness = little\n",
        v.scheme().len(),
        join_f64(v.scheme().bvalues(), " ")
    );
    let n = v.scheme().len();
    let mut raw = Vec::with_capacity(v.data().len() * 4);
    for voxel in 0..v.voxel_count() {
        for &s in v.samples(voxel) {
            let x = if v.is_masked_in(voxel) { s as f32 } else { f32::NAN };
            raw.extend_from_slice(&x.to_le_bytes());
        }
    }
    debug_assert_eq!(raw.len(), v.voxel_count() * n * 4);
    (header, raw)
}

/// Header and body paths for a volume given either of them (or the stem).
pub fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("hdr"), path.with_extension("raw"))
}

/// Reads a volume. Voxels whose samples are all NaN are treated as masked out.
pub fn read_volume(path: &Path) -> Result<VoxelVolume> {
    let (hdr_path, raw_path) = volume_paths(path);
    let text = std::fs::read_to_string(&hdr_path).with_context(|| format!("cannot read {}", hdr_path.display()))?;
    let mut dims = None;
    let mut n_b = None;
    let mut bvalues = None;
    let mut dtype = None;
    let mut endian = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("{}:{}: expected `key = value`", hdr_path.display(), lineno + 1))?;
        let (key, value) = (key.trim(), value.trim());
        let ctx = || format!("{}: field `{key}`", hdr_path.display());
        match key {
            "dims" => {
                let d: Vec<usize> = value
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .with_context(ctx)?;
                ensure!(d.len() == 3, "{}: expected three dimensions", ctx());
                dims = Some([d[0], d[1], d[2]]);
            }
            "n_bvalues" => n_b = Some(value.parse::<usize>().with_context(ctx)?),
            "bvalues" => {
                bvalues = Some(
                    value
                        .split_whitespace()
                        .map(str::parse)
                        .collect::<std::result::Result<Vec<f64>, _>>()
                        .with_context(ctx)?,
                )
            }
            "dtype" => dtype = Some(value.to_string()),
            "endianness" => endian = Some(value.to_string()),
            other => bail!("{}: unknown header field `{other}`", hdr_path.display()),
        }
    }
    let missing = |k: &str| format!("{}: missing field `{k}`", hdr_path.display());
    let dims = dims.with_context(|| missing("dims"))?;
    let n_b = n_b.with_context(|| missing("n_bvalues"))?;
    let bvalues = bvalues.with_context(|| missing("bvalues"))?;
    ensure!(
        dtype.as_deref() == Some("float32"),
        "{}: field `dtype` must be float32",
        hdr_path.display()
    );
    ensure!(
        endian.as_deref() == Some("little"),
        "{}: field `endianness` must be little",
        hdr_path.display()
    );
    ensure!(
        bvalues.len() == n_b,
        "{}: field `bvalues` lists {} values but n_bvalues = {n_b}",
        hdr_path.display(),
        bvalues.len()
    );
    let scheme = AcquisitionScheme::new(bvalues).with_context(|| format!("{}: field `bvalues`", hdr_path.display()))?;

    let raw = std::fs::read(&raw_path).with_context(|| format!("cannot read {}", raw_path.display()))?;
    let voxels: usize = dims.iter().product();
    let expected = voxels * n_b * 4;
    ensure!(
        raw.len() == expected,
        "{}: body has {} bytes, expected {expected}",
        raw_path.display(),
        raw.len()
    );
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mask: Vec<bool> = data.chunks(n_b.max(1)).map(|c| !c.iter().all(|v| v.is_nan())).collect();
    VoxelVolume::new(dims, scheme, data, Some(mask)).with_context(|| format!("{}", raw_path.display()))
}

/// `bvalue,s_1,…,s_k`, one row per b-value.
pub fn encode_table(scheme: &AcquisitionScheme, curves: &[Vec<f64>]) -> String {
    let mut out = String::from("bvalue");
    if curves.len() == 1 {
        out.push_str(",signal");
    } else {
        for k in 1..=curves.len() {
            let _ = write!(out, ",s_{k}");
        }
    }
    out.push('\n');
    for (i, b) in scheme.bvalues().iter().enumerate() {
        out.push_str(&b.to_string());
        for c in curves {
            let _ = write!(out, ",{}", c[i]);
        }
        out.push('\n');
    }
    out
}

/// Reads a curve table into a `k × 1 × 1` volume.
pub fn read_table(path: &Path) -> Result<VoxelVolume> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().with_context(|| format!("{}: empty table", path.display()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    ensure!(cols[0] == "bvalue", "{}: first column must be `bvalue`", path.display());
    let k = cols.len() - 1;
    ensure!(k > 0, "{}: table holds no curves", path.display());
    let mut bvalues = Vec::new();
    let mut curves = vec![Vec::new(); k];
    for (lineno, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        ensure!(
            cells.len() == cols.len(),
            "{}:{}: {} columns, header has {}",
            path.display(),
            lineno + 2,
            cells.len(),
            cols.len()
        );
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .with_context(|| format!("{}:{}: `{s}` is not a number", path.display(), lineno + 2))
        };
        bvalues.push(parse(cells[0])?);
        for (c, cell) in curves.iter_mut().zip(&cells[1..]) {
            c.push(parse(cell)?);
        }
    }
    let scheme = AcquisitionScheme::new(bvalues).with_context(|| format!("{}: column `bvalue`", path.display()))?;
    let data = curves.concat();
    VoxelVolume::new([k, 1, 1], scheme, data, None).with_context(|| format!("{}", path.display()))
}

/// Reads a volume (`.hdr`/`.raw`) or a curve table (anything else).
pub fn read_input(path: &Path) -> Result<VoxelVolume> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("hdr") | Some("raw") => read_volume(path),
        _ => read_table(path),
    }
}

/// Ground truth per voxel; masked-out voxels hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub dims: [usize; 3],
    pub params: Vec<Option<IvimParams>>,
}

const TRUTH_HEADER: &str = "voxel,x,y,z,mask,s0,f,d_star,d";

pub fn encode_truth(t: &Truth) -> String {
    let mut out = format!("{TRUTH_HEADER}\n");
    let [nx, ny, _] = t.dims;
    for (v, p) in t.params.iter().enumerate() {
        let (x, y, z) = (v % nx, (v / nx) % ny, v / (nx * ny));
        match p {
            Some(p) => {
                let _ = writeln!(out, "{v},{x},{y},{z},1,{},{},{},{}", p.s0, p.f, p.d_star, p.d);
            }
            None => {
                let _ = writeln!(out, "{v},{x},{y},{z},0,NaN,NaN,NaN,NaN");
            }
        }
    }
    out
}

pub fn read_truth(path: &Path) -> Result<Vec<Option<IvimParams>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    ensure!(
        lines.next().map(str::trim) == Some(TRUTH_HEADER),
        "{}: expected header `{TRUTH_HEADER}`",
        path.display()
    );
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        ensure!(cells.len() == 9, "{}:{}: expected 9 columns", path.display(), lineno + 2);
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .with_context(|| format!("{}:{}: `{s}` is not a number", path.display(), lineno + 2))
        };
        if cells[4] == "1" {
            out.push(Some(IvimParams::from_array([
                num(cells[5])?,
                num(cells[6])?,
                num(cells[7])?,
                num(cells[8])?,
            ])));
        } else {
            out.push(None);
        }
    }
    Ok(out)
}

/// `x,y,z,value` for every voxel.
pub fn encode_map_csv(dims: [usize; 3], values: &[f64]) -> String {
    let [nx, ny, _] = dims;
    let mut out = String::from("x,y,z,value\n");
    for (v, value) in values.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{value}", v % nx, (v / nx) % ny, v / (nx * ny));
    }
    out
}

/// 8-bit binary PGM with z-slices tiled left to right. Finite values map
/// linearly onto 1..=255 (a constant map is uniform 128); missing values are 0.
pub fn encode_pgm(name: &str, dims: [usize; 3], values: &[f64]) -> Vec<u8> {
    let [nx, ny, nz] = dims;
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let scale = if lo.is_finite() {
        format!("min={lo} max={hi}")
    } else {
        "min=NaN max=NaN".to_string()
    };
    let (w, h) = (nx * nz, ny);
    let mut out = format!("P5\n# {name} {scale} pixel=1+254*(value-min)/(max-min) missing=0\n{w} {h}\n255\n").into_bytes();
    let mut pixels = vec![0u8; w * h];
    for (v, &value) in values.iter().enumerate() {
        let (x, y, z) = (v % nx, (v / nx) % ny, v / (nx * ny));
        pixels[y * w + z * nx + x] = if !value.is_finite() {
            0
        } else if hi > lo {
            (1.0 + 254.0 * (value - lo) / (hi - lo)).round() as u8
        } else {
            128
        };
    }
    out.extend(pixels);
    out
}
