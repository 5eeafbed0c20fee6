//! Trajectory export: columnar text (`t,agent_id,type,x,y,theta`) and a compact
//! little-endian binary variant.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::sim::{AgentState, AgentType, Trajectory};

pub const CSV_HEADER: &str = "t,agent_id,type,x,y,theta";
const MAGIC: &[u8; 4] = b"HSTJ";
const VERSION: u32 = 1;

pub fn write_csv<W: Write>(traj: &Trajectory, mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for (t, frame) in traj.frames().enumerate() {
        for (i, s) in frame.iter().enumerate() {
            writeln!(w, "{t},{i},{},{},{},{}", s.kind.as_char(), s.x, s.y, s.theta)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses the text format back into frames of agent states.
pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<Vec<AgentState>>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Format(format!("expected header {CSV_HEADER:?}"))),
    }
    let mut frames: Vec<Vec<AgentState>> = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("line {}: malformed record {line:?}", n + 2));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(bad());
        }
        let t: usize = cols[0].parse().map_err(|_| bad())?;
        let i: usize = cols[1].parse().map_err(|_| bad())?;
        let kind = match cols[2] {
            "A" => AgentType::A,
            "B" => AgentType::B,
            _ => return Err(bad()),
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let state = AgentState {
            x: num(cols[3])?,
            y: num(cols[4])?,
            theta: num(cols[5])?,
            kind,
        };
        if t == frames.len() {
            frames.push(Vec::new());
        }
        if t + 1 != frames.len() || i != frames[t].len() {
            return Err(Error::Format(format!("line {}: records out of order", n + 2)));
        }
        frames[t].push(state);
    }
    Ok(frames)
}

pub fn write_binary<W: Write>(traj: &Trajectory, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(traj.n_agents() as u32).to_le_bytes())?;
    w.write_all(&(traj.len() as u32).to_le_bytes())?;
    for frame in traj.frames() {
        for s in frame {
            w.write_all(&[s.kind.as_char() as u8])?;
            w.write_all(&s.x.to_le_bytes())?;
            w.write_all(&s.y.to_le_bytes())?;
            w.write_all(&s.theta.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Vec<Vec<AgentState>>> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("not a binary trajectory file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap());
    if word(4) != VERSION {
        return Err(Error::Format(format!("unsupported trajectory version {}", word(4))));
    }
    let (n, len) = (word(8) as usize, word(12) as usize);
    let mut rec = [0u8; 25];
    let f = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
    (0..len)
        .map(|_| {
            (0..n)
                .map(|_| {
                    r.read_exact(&mut rec)?;
                    let kind = match rec[0] {
                        b'A' => AgentType::A,
                        b'B' => AgentType::B,
                        other => {
                            return Err(Error::Format(format!("bad agent type byte {other}")))
                        }
                    };
                    Ok(AgentState {
                        x: f(&rec[1..9]),
                        y: f(&rec[9..17]),
                        theta: f(&rec[17..25]),
                        kind,
                    })
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::Genome;
    use crate::sim::{simulate, SimConfig};

    fn sample() -> Trajectory {
        let cfg = SimConfig {
            horizon: 25,
            n_agents: 6,
            ..SimConfig::default()
        };
        simulate(&Genome::new([0.3, 0.9, -0.2, 0.4], [1.0, 0.1, 0.5, -0.5], 0.5), &cfg, 11).unwrap()
    }

    #[test]
    fn both_formats_reproduce_frames() {
        let t = sample();
        let expected: Vec<Vec<AgentState>> = t.frames().map(|f| f.to_vec()).collect();

        let mut text = Vec::new();
        write_csv(&t, &mut text).unwrap();
        assert_eq!(read_csv(&text[..]).unwrap(), expected);
        assert_eq!(text.split(|&b| b == b'\n').filter(|l| !l.is_empty()).count(), 1 + 25 * 6);

        let mut bin = Vec::new();
        write_binary(&t, &mut bin).unwrap();
        assert_eq!(bin.len(), 16 + 25 * 6 * 25);
        assert_eq!(read_binary(&bin[..]).unwrap(), expected);
    }

    #[test]
    fn malformed_inputs() {
        assert!(read_csv(&b"x,y\n"[..]).is_err());
        assert!(read_csv(&b"t,agent_id,type,x,y,theta\n0,0,C,1,2,3\n"[..]).is_err());
        assert!(read_csv(&b"t,agent_id,type,x,y,theta\n0,1,A,1,2,3\n"[..]).is_err());
        assert!(read_binary(&b"NOPE0000000000000000"[..]).is_err());
    }
}
