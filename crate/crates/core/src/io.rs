//! File formats.
//!
//! All CSV files carry a header row and use 1-based element, gear, antenna
//! and measurement indices. Floats are written in shortest round-trip form, so
//! identical values always produce identical bytes.
//!
//! | file            | header                       |
//! |-----------------|------------------------------|
//! | phase table     | `element,gear,phase_rad`     |
//! | measurements    | `q,rx_antenna,re,im`         |
//! | channels        | `matrix,row,col,re,im`       |
//! | schedule        | `q,element,gear`             |
//! | CRB             | `element,gear,crb_deg`       |
//! | history         | `epoch,c_ave`                |
//!
//! The optional FIM dump is binary: two little-endian `u64` (rows, cols)
//! followed by the matrix in row-major order as little-endian `f64`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::crb::CrbResult;
use crate::error::{Error, Result};
use crate::model::{MeasurementSet, PhaseTable};
use crate::schedule::GearSchedule;
use crate::C64;

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(f))
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn one_based(path: &Path, what: &str, v: usize) -> Result<usize> {
    v.checked_sub(1)
        .ok_or_else(|| parse_err(path, format!("{what} indices are 1-based, found 0")))
}

#[derive(Debug, Serialize, Deserialize)]
struct PhaseRow {
    element: usize,
    gear: usize,
    phase_rad: f64,
}

pub fn write_phase_table(path: &Path, table: &PhaseTable) -> Result<()> {
    let mut w = create(path)?;
    for m in 0..table.m_ris() {
        for l in 0..table.l_gears() {
            w.serialize(PhaseRow {
                element: m + 1,
                gear: l + 1,
                phase_rad: table.phase(m, l),
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a phase table; every (element, gear) pair must appear exactly once.
pub fn read_phase_table(path: &Path) -> Result<PhaseTable> {
    let rows: Vec<PhaseRow> = open(path)?.deserialize().collect::<Result<_, _>>()?;
    let m_ris = rows.iter().map(|r| r.element).max().unwrap_or(0);
    let l = rows.iter().map(|r| r.gear).max().unwrap_or(0);
    if m_ris == 0 || l == 0 || rows.len() != m_ris * l {
        return Err(parse_err(path, "phase table is empty or incomplete"));
    }
    let mut phases = DMatrix::from_element(m_ris, l, f64::NAN);
    for r in &rows {
        let (m, g) = (one_based(path, "element", r.element)?, one_based(path, "gear", r.gear)?);
        if !phases[(m, g)].is_nan() {
            return Err(parse_err(path, format!("duplicate entry for element {} gear {}", r.element, r.gear)));
        }
        phases[(m, g)] = r.phase_rad;
    }
    PhaseTable::from_matrix(phases)
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementRow {
    q: usize,
    rx_antenna: usize,
    re: f64,
    im: f64,
}

pub fn write_measurements(path: &Path, meas: &MeasurementSet) -> Result<()> {
    let mut w = create(path)?;
    for (q, h) in meas.iter().enumerate() {
        for (i, v) in h.iter().enumerate() {
            w.serialize(MeasurementRow {
                q: q + 1,
                rx_antenna: i + 1,
                re: v.re,
                im: v.im,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads measurements; `noise_var_eff` is not stored in the file and must be
/// supplied.
pub fn read_measurements(path: &Path, noise_var_eff: f64) -> Result<MeasurementSet> {
    let rows: Vec<MeasurementRow> = open(path)?.deserialize().collect::<Result<_, _>>()?;
    let q_total = rows.iter().map(|r| r.q).max().unwrap_or(0);
    let m_r = rows.iter().map(|r| r.rx_antenna).max().unwrap_or(0);
    if q_total == 0 || rows.len() != q_total * m_r {
        return Err(parse_err(path, "measurement file is empty or incomplete"));
    }
    let mut h = vec![DVector::from_element(m_r, C64::new(f64::NAN, f64::NAN)); q_total];
    for r in &rows {
        let (q, i) = (one_based(path, "q", r.q)?, one_based(path, "rx_antenna", r.rx_antenna)?);
        if !h[q][i].re.is_nan() {
            return Err(parse_err(path, format!("duplicate entry for q {} antenna {}", r.q, r.rx_antenna)));
        }
        h[q][i] = C64::new(r.re, r.im);
    }
    MeasurementSet::new(h, noise_var_eff)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScheduleRow {
    q: usize,
    element: usize,
    gear: usize,
}

pub fn write_schedule(path: &Path, sched: &GearSchedule) -> Result<()> {
    let mut w = create(path)?;
    for q in 0..sched.q_total() {
        for m in 0..sched.m_ris() {
            w.serialize(ScheduleRow {
                q: q + 1,
                element: m + 1,
                gear: sched.gear(q, m) + 1,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_schedule(path: &Path, l_gears: usize) -> Result<GearSchedule> {
    let rows: Vec<ScheduleRow> = open(path)?.deserialize().collect::<Result<_, _>>()?;
    let q_total = rows.iter().map(|r| r.q).max().unwrap_or(0);
    let m_ris = rows.iter().map(|r| r.element).max().unwrap_or(0);
    if q_total == 0 || rows.len() != q_total * m_ris {
        return Err(parse_err(path, "schedule file is empty or incomplete"));
    }
    let mut vectors = vec![vec![usize::MAX; m_ris]; q_total];
    for r in &rows {
        let (q, m) = (one_based(path, "q", r.q)?, one_based(path, "element", r.element)?);
        if vectors[q][m] != usize::MAX {
            return Err(parse_err(path, format!("duplicate entry for q {} element {}", r.q, r.element)));
        }
        vectors[q][m] = one_based(path, "gear", r.gear)?;
    }
    GearSchedule::from_gear_vectors(&vectors, m_ris, l_gears)
}

#[derive(Debug, Serialize, Deserialize)]
struct ChannelRow {
    matrix: String,
    row: usize,
    col: usize,
    re: f64,
    im: f64,
}

pub fn write_channels(path: &Path, ch: &ChannelSet) -> Result<()> {
    let mut w = create(path)?;
    let mut put = |name: &str, r: usize, c: usize, v: C64| {
        w.serialize(ChannelRow {
            matrix: name.to_string(),
            row: r + 1,
            col: c + 1,
            re: v.re,
            im: v.im,
        })
    };
    for (i, v) in ch.h_br_bt().iter().enumerate() {
        put("h_brbt", i, 0, *v)?;
    }
    for (i, v) in ch.h_r_bt().iter().enumerate() {
        put("h_rbt", i, 0, *v)?;
    }
    for r in 0..ch.m_r() {
        for c in 0..ch.m_ris() {
            put("h_brr", r, c, ch.h_brr()[(r, c)])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_channels(path: &Path) -> Result<ChannelSet> {
    let rows: Vec<ChannelRow> = open(path)?.deserialize().collect::<Result<_, _>>()?;
    let dims = |name: &str| {
        rows.iter()
            .filter(|r| r.matrix == name)
            .fold((0, 0), |(a, b), r| (a.max(r.row), b.max(r.col)))
    };
    let (m_r, _) = dims("h_brbt");
    let (m_ris, _) = dims("h_rbt");
    let mut direct = DVector::zeros(m_r);
    let mut tx_ris = DVector::zeros(m_ris);
    let mut ris_rx = DMatrix::zeros(m_r, m_ris);
    let mut seen = 0usize;
    for r in &rows {
        let (i, j) = (one_based(path, "row", r.row)?, one_based(path, "col", r.col)?);
        let v = C64::new(r.re, r.im);
        match (r.matrix.as_str(), j) {
            ("h_brbt", 0) if i < m_r => direct[i] = v,
            ("h_rbt", 0) if i < m_ris => tx_ris[i] = v,
            ("h_brr", _) if i < m_r && j < m_ris => ris_rx[(i, j)] = v,
            _ => return Err(parse_err(path, format!("unexpected entry {} ({}, {})", r.matrix, r.row, r.col))),
        }
        seen += 1;
    }
    if m_r == 0 || m_ris == 0 || seen != m_r + m_ris + m_r * m_ris {
        return Err(parse_err(path, "channel file is empty or incomplete"));
    }
    ChannelSet::new(direct, tx_ris, ris_rx)
}

#[derive(Debug, Serialize)]
struct CrbRow {
    element: usize,
    gear: usize,
    crb_deg: f64,
}

/// Per-phase CRB (as a standard deviation in degrees) for gears 2..L.
pub fn write_crb(path: &Path, crb: &CrbResult) -> Result<()> {
    let mut w = create(path)?;
    for m in 0..crb.layout.m_ris {
        for l in 1..crb.layout.l_gears {
            w.serialize(CrbRow {
                element: m + 1,
                gear: l + 1,
                crb_deg: crb.crb_deg(m, l),
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct HistoryRow {
    epoch: usize,
    c_ave: f64,
}

pub fn write_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    for (t, c) in history.iter().enumerate() {
        w.serialize(HistoryRow {
            epoch: t + 1,
            c_ave: *c,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `key = value` lines.
pub fn write_key_values(path: &Path, header: &str, pairs: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for line in header.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    for (k, v) in pairs {
        out.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_fim_binary(path: &Path, fim: &DMatrix<f64>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(&(fim.nrows() as u64).to_le_bytes())?;
    put(&(fim.ncols() as u64).to_le_bytes())?;
    for r in 0..fim.nrows() {
        for c in 0..fim.ncols() {
            put(&fim[(r, c)].to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_fim_binary(path: &Path) -> Result<DMatrix<f64>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(parse_err(path, "FIM dump shorter than its header"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(0) as usize, word(8) as usize);
    if bytes.len() != 16 + 8 * rows * cols {
        return Err(parse_err(path, "FIM dump size does not match its header"));
    }
    Ok(DMatrix::from_fn(rows, cols, |r, c| {
        let i = 16 + 8 * (r * cols + c);
        f64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channels, ChannelModelSpec};
    use crate::model::{sample_deviated_table, RisConfig};
    use crate::schedule::build_schedule;

    #[test]
    fn phase_table_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RisConfig::new(2, 1, 1, 1, 1, 0.0).unwrap();
        let t = crate::model::nominal_table(&cfg);
        let p = dir.path().join("t.csv");
        write_phase_table(&p, &t).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let pi = std::f64::consts::PI;
        assert_eq!(
            text,
            format!("element,gear,phase_rad\n1,1,0.0\n1,2,{pi}\n2,1,0.0\n2,2,{pi}\n")
        );
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RisConfig::new(5, 2, 3, 10, 2, 10.0).unwrap();
        let t = sample_deviated_table(&cfg, 0.3, 1).unwrap();
        let p = dir.path().join("t.csv");
        write_phase_table(&p, &t).unwrap();
        assert_eq!(read_phase_table(&p).unwrap(), t);

        let s = build_schedule(&cfg, 3);
        let p = dir.path().join("s.csv");
        write_schedule(&p, &s).unwrap();
        assert_eq!(read_schedule(&p, 4).unwrap(), s);

        let ch = generate_channels(&ChannelModelSpec::default(), &cfg, 2).unwrap();
        let p = dir.path().join("c.csv");
        write_channels(&p, &ch).unwrap();
        assert_eq!(read_channels(&p).unwrap(), ch);

        let fim = DMatrix::from_fn(3, 4, |r, c| (r * 10 + c) as f64 / 7.0);
        let p = dir.path().join("fim.bin");
        write_fim_binary(&p, &fim).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 8 * 12);
        assert_eq!(read_fim_binary(&p).unwrap(), fim);
    }

    #[test]
    fn incomplete_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "element,gear,phase_rad\n1,1,0.0\n2,2,1.0\n").unwrap();
        assert!(read_phase_table(&p).is_err());
        std::fs::write(&p, "q,element,gear\n1,1,1\n2,1,1\n").unwrap();
        assert!(read_schedule(&p, 2).is_err());
        std::fs::write(&p, "q,rx_antenna,re,im\n0,1,0.0,0.0\n").unwrap();
        assert!(read_measurements(&p, 0.0).is_err());
    }
}
