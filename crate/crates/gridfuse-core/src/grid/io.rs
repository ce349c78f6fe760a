//! Dataset persistence: a JSON manifest plus one little-endian binary file
//! per trajectory. Loading re-solves each operating point, so the stored
//! files stay small and the attached truth can never drift from the data.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::dataset::{build_sample, DatasetConfig, RawDataset};
use super::simulate::SimulatedTrajectory;
use super::{GridModel, OperatingPoint};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: u32 = 0x4754_524A;
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    grid: GridModel,
    config: DatasetConfig,
    ops: Vec<OperatingPoint>,
}

fn write_matrix<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_u64::<LittleEndian>(t.rows() as u64)?;
    w.write_u64::<LittleEndian>(t.cols() as u64)?;
    for &v in t.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R) -> Result<Tensor> {
    let rows = r.read_u64::<LittleEndian>()? as usize;
    let cols = r.read_u64::<LittleEndian>()? as usize;
    let mut data = vec![0.0; rows * cols];
    for v in &mut data {
        *v = r.read_f64::<LittleEndian>()?;
    }
    Ok(Tensor::new(vec![rows, cols], data))
}

fn traj_path(dir: &Path, i: usize) -> std::path::PathBuf {
    dir.join(format!("traj_{i:04}.bin"))
}

pub fn save_dataset(ds: &RawDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        version: VERSION,
        grid: ds.grid.clone(),
        config: ds.config.clone(),
        ops: ds.samples.iter().map(|s| s.op.clone()).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("meta.json"), text)?;
    for (i, s) in ds.samples.iter().enumerate() {
        let mut buf = Vec::new();
        buf.write_u32::<LittleEndian>(MAGIC)?;
        buf.write_u32::<LittleEndian>(VERSION)?;
        buf.write_f64::<LittleEndian>(s.traj.dt)?;
        write_matrix(&mut buf, &s.traj.states)?;
        write_matrix(&mut buf, &s.traj.inputs)?;
        write_matrix(&mut buf, &s.traj.outputs)?;
        fs::write(traj_path(dir, i), buf)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<RawDataset> {
    let text = fs::read_to_string(dir.join("meta.json"))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if manifest.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {}",
            manifest.version
        )));
    }
    let grid = manifest.grid;
    grid.validate()?;
    let mut samples = Vec::with_capacity(manifest.ops.len());
    for (i, op) in manifest.ops.iter().enumerate() {
        let bytes = fs::read(traj_path(dir, i))?;
        let mut r = bytes.as_slice();
        if r.read_u32::<LittleEndian>()? != MAGIC {
            return Err(Error::Format(format!("bad trajectory header in file {i}")));
        }
        if r.read_u32::<LittleEndian>()? != VERSION {
            return Err(Error::Format(format!(
                "unsupported trajectory version in file {i}"
            )));
        }
        let dt = r.read_f64::<LittleEndian>()?;
        let states = read_matrix(&mut r)?;
        let inputs = read_matrix(&mut r)?;
        let outputs = read_matrix(&mut r)?;
        // Rebuild the equilibrium and truth from the operating point; the
        // stored trajectory replaces the regenerated one verbatim.
        let x0 = Tensor::vector(states.data()[..states.cols()].to_vec());
        let mut s = build_sample(&grid, op, &x0, 0, dt)?;
        s.traj = SimulatedTrajectory {
            dt,
            states,
            inputs,
            outputs,
        };
        samples.push(s);
    }
    Ok(RawDataset {
        grid,
        config: manifest.config,
        samples,
    })
}

/// Flat CSV of one trajectory for external plotting.
pub fn export_csv(ds: &RawDataset, sample: usize, path: &Path) -> Result<()> {
    let s = ds
        .samples
        .get(sample)
        .ok_or_else(|| Error::IndexError(format!("sample {sample} out of range")))?;
    let mut out = String::new();
    out.push_str("t");
    for j in 0..s.traj.states.cols() {
        out.push_str(&format!(",x{j}"));
    }
    for j in 0..s.traj.inputs.cols() {
        out.push_str(&format!(",u{j}"));
    }
    for j in 0..s.traj.outputs.cols() {
        out.push_str(&format!(",y{j}"));
    }
    out.push('\n');
    for k in 0..s.traj.states.rows() {
        out.push_str(&format!("{}", k as f64 * s.traj.dt));
        for j in 0..s.traj.states.cols() {
            out.push_str(&format!(",{:.12e}", s.traj.states.get(k, j)));
        }
        for j in 0..s.traj.inputs.cols() {
            out.push_str(&format!(",{:.12e}", s.traj.inputs.get(k, j)));
        }
        for j in 0..s.traj.outputs.cols() {
            out.push_str(&format!(",{:.12e}", s.traj.outputs.get(k, j)));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::dataset::generate_dataset;
    use crate::grid::two_machine_three_bus;

    #[test]
    fn round_trip_is_lossless() {
        let grid = two_machine_three_bus();
        let cfg = DatasetConfig {
            n_samples: 2,
            steps: 30,
            ..DatasetConfig::benchmark(&grid.name, 2, 5)
        };
        let ds = generate_dataset(&grid, &cfg).unwrap();
        let dir = std::env::temp_dir().join(format!("gfds-{}", std::process::id()));
        save_dataset(&ds, &dir).unwrap();
        let back = load_dataset(&dir).unwrap();
        assert_eq!(ds.samples.len(), back.samples.len());
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a.op, b.op);
            assert_eq!(a.traj.states.data(), b.traj.states.data());
            assert_eq!(a.traj.inputs.data(), b.traj.inputs.data());
            assert_eq!(a.traj.outputs.data(), b.traj.outputs.data());
            let d = a.truth.a_sys.sub(&b.truth.a_sys).norm_inf();
            assert!(d < 1e-12);
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn save_twice_is_byte_identical() {
        let grid = two_machine_three_bus();
        let cfg = DatasetConfig {
            n_samples: 1,
            steps: 20,
            ..DatasetConfig::benchmark(&grid.name, 1, 9)
        };
        let pid = std::process::id();
        let d1 = std::env::temp_dir().join(format!("gfds-a-{pid}"));
        let d2 = std::env::temp_dir().join(format!("gfds-b-{pid}"));
        save_dataset(&generate_dataset(&grid, &cfg).unwrap(), &d1).unwrap();
        save_dataset(&generate_dataset(&grid, &cfg).unwrap(), &d2).unwrap();
        for name in ["meta.json", "traj_0000.bin"] {
            let a = fs::read(d1.join(name)).unwrap();
            let b = fs::read(d2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
        fs::remove_dir_all(&d1).unwrap();
        fs::remove_dir_all(&d2).unwrap();
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let grid = two_machine_three_bus();
        let cfg = DatasetConfig {
            n_samples: 1,
            steps: 10,
            ..DatasetConfig::benchmark(&grid.name, 1, 2)
        };
        let ds = generate_dataset(&grid, &cfg).unwrap();
        let path = std::env::temp_dir().join(format!("gfds-{}.csv", std::process::id()));
        export_csv(&ds, 0, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 12);
        assert!(lines[0].starts_with("t,x0"));
        fs::remove_file(&path).unwrap();
    }
}
