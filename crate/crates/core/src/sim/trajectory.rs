use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub name: String,
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub load_index: Option<usize>,
}

impl Event {
    pub fn new(name: &str, t: f64, load_index: Option<usize>) -> Self {
        Event {
            name: name.to_string(),
            t,
            load_index,
        }
    }
}

/// What a channel measures, judged from its name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelClass {
    Voltage,
    Frequency,
    Angle,
    Load,
    Power,
    Internal,
}

pub fn channel_class(name: &str) -> ChannelClass {
    let prefix = name.split('_').next().unwrap_or("");
    match prefix {
        "V" => ChannelClass::Voltage,
        "omega" => ChannelClass::Frequency,
        "theta" | "delta" => ChannelClass::Angle,
        "PL" | "QL" => ChannelClass::Load,
        "PG" | "QG" => ChannelClass::Power,
        _ => ChannelClass::Internal,
    }
}

/// Recorded channel time series, stored channel-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub channels: Vec<String>,
    pub times: Vec<f64>,
    /// `samples[c][k]` is channel `c` at `times[k]`.
    pub samples: Vec<Vec<f64>>,
    /// Pre-attack equilibrium value of every channel.
    pub equilibrium: Vec<f64>,
    pub events: Vec<Event>,
    pub terminated_early: Option<String>,
}

impl Trajectory {
    pub fn new(channels: Vec<String>, equilibrium: Vec<f64>) -> Self {
        let samples = vec![Vec::new(); channels.len()];
        Trajectory {
            channels,
            samples,
            equilibrium,
            ..Default::default()
        }
    }

    pub fn push(&mut self, t: f64, values: &[f64]) {
        debug_assert_eq!(values.len(), self.channels.len());
        self.times.push(t);
        for (c, v) in self.samples.iter_mut().zip(values) {
            c.push(*v);
        }
    }

    pub(crate) fn pop(&mut self) {
        self.times.pop();
        for c in &mut self.samples {
            c.pop();
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channel_index(name).map(|i| self.samples[i].as_slice())
    }

    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn event(&self, name: &str) -> Option<&Event> {
        self.events.iter().find(|e| e.name == name)
    }

    /// Samples with `t0 <= t < t1`, as a new trajectory sharing channels.
    pub fn window(&self, t0: f64, t1: f64) -> Trajectory {
        let eps = 1e-9;
        let lo = self.times.partition_point(|&t| t < t0 - eps);
        let hi = self.times.partition_point(|&t| t < t1 - eps);
        Trajectory {
            channels: self.channels.clone(),
            times: self.times[lo..hi].to_vec(),
            samples: self.samples.iter().map(|c| c[lo..hi].to_vec()).collect(),
            equilibrium: self.equilibrium.clone(),
            events: self
                .events
                .iter()
                .filter(|e| e.t >= t0 - eps && e.t < t1 - eps)
                .cloned()
                .collect(),
            terminated_early: self.terminated_early.clone(),
        }
    }

    /// Keeps only the named channels, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Trajectory> {
        let idx = names
            .iter()
            .map(|n| {
                self.channel_index(n)
                    .ok_or_else(|| Error::MissingChannel(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory {
            channels: names.to_vec(),
            times: self.times.clone(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            equilibrium: if self.equilibrium.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| self.equilibrium[i]).collect()
            },
            events: self.events.clone(),
            terminated_early: self.terminated_early.clone(),
        })
    }

    /// CSV with a leading `t` column.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(self.channels.iter().cloned());
        wr.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for k in 0..self.len() {
            row.clear();
            row.push(format!("{}", self.times[k]));
            row.extend(self.samples.iter().map(|c| format!("{}", c[k])));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`Trajectory::write_csv`]. The first row is
    /// taken as the equilibrium reference.
    pub fn read_csv<R: Read>(r: R) -> Result<Trajectory> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.get(0) != Some("t") {
            return Err(Error::config("trajectory CSV must start with a 't' column"));
        }
        let channels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut traj = Trajectory::new(channels, Vec::new());
        let mut vals = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            vals.clear();
            for f in rec.iter() {
                vals.push(
                    f.trim().parse::<f64>().map_err(|_| {
                        Error::config(format!("bad number {f:?} in trajectory CSV"))
                    })?,
                );
            }
            if vals.len() != traj.channels.len() + 1 {
                return Err(Error::config("ragged trajectory CSV row"));
            }
            traj.push(vals[0], &vals[1..]);
        }
        traj.equilibrium = traj
            .samples
            .iter()
            .map(|c| c.first().copied().unwrap_or(0.0))
            .collect();
        Ok(traj)
    }

    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        self.write_csv(f)?;
        let events = std::fs::File::create(events_path(csv_path))?;
        serde_json::to_writer_pretty(events, &self.events)?;
        Ok(())
    }

    /// Loads a trajectory CSV and, when present, its event sidecar.
    pub fn load(csv_path: &Path) -> Result<Trajectory> {
        let mut traj =
            Trajectory::read_csv(std::io::BufReader::new(std::fs::File::open(csv_path)?))?;
        let ev = events_path(csv_path);
        if ev.exists() {
            traj.events = serde_json::from_reader(std::fs::File::open(ev)?)?;
        }
        Ok(traj)
    }

    /// Whether sample times are strictly increasing with a uniform spacing.
    pub fn is_uniform(&self, rel_tol: f64) -> bool {
        if self.times.len() < 3 {
            return self.times.windows(2).all(|w| w[1] > w[0]);
        }
        let h = self.times[1] - self.times[0];
        h > 0.0
            && self
                .times
                .windows(2)
                .all(|w| ((w[1] - w[0]) - h).abs() <= rel_tol * h)
    }
}

/// Header of the binary trajectory format; the body is `times` followed by
/// every channel, each as little-endian f64.
#[derive(Debug, Serialize, Deserialize)]
struct BinaryHeader {
    channels: Vec<String>,
    n_samples: usize,
    equilibrium: Vec<f64>,
    events: Vec<Event>,
    terminated_early: Option<String>,
}

impl Trajectory {
    /// Writes `path` (f64 body) and `path.json` (header). Values round-trip
    /// bit for bit.
    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let header = BinaryHeader {
            channels: self.channels.clone(),
            n_samples: self.len(),
            equilibrium: self.equilibrium.clone(),
            events: self.events.clone(),
            terminated_early: self.terminated_early.clone(),
        };
        let mut body = Vec::with_capacity(8 * self.len() * (self.channels.len() + 1));
        for v in self.times.iter().chain(self.samples.iter().flatten()) {
            body.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, body)?;
        std::fs::write(binary_header_path(path), serde_json::to_vec(&header)?)?;
        Ok(())
    }

    pub fn load_binary(path: &Path) -> Result<Trajectory> {
        let header: BinaryHeader =
            serde_json::from_slice(&std::fs::read(binary_header_path(path))?)?;
        let body = std::fs::read(path)?;
        let n = header.n_samples;
        let expected = 8 * n * (header.channels.len() + 1);
        if body.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: body.len(),
            });
        }
        let mut vals = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")));
        let mut take = || (&mut vals).take(n).collect::<Vec<f64>>();
        let times = take();
        let samples = header.channels.iter().map(|_| take()).collect();
        Ok(Trajectory {
            channels: header.channels,
            times,
            samples,
            equilibrium: header.equilibrium,
            events: header.events,
            terminated_early: header.terminated_early,
        })
    }
}

fn binary_header_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// `traj.csv` -> `traj.events.json`.
pub fn events_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("events.json")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_is_exact() {
        let mut t = Trajectory::new(vec!["V_1".into(), "omega_g1".into()], vec![1.0, 1.0]);
        t.push(0.0, &[1.0, 1.0]);
        t.push(0.05, &[0.1 + 0.2, -1e-300]);
        t.events.push(Event::new("shed", 0.05, Some(3)));
        t.terminated_early = Some("integrator: x".into());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.traj");
        t.save_binary(&p).unwrap();
        assert_eq!(Trajectory::load_binary(&p).unwrap(), t);
    }

    #[test]
    fn csv_round_trip_keeps_values() {
        let mut t = Trajectory::new(vec!["V_1".into(), "omega_g1".into()], vec![1.0, 1.0]);
        t.push(0.0, &[1.0, 1.0]);
        t.push(0.05, &[0.999_999_123_456_789, 1.000_000_1]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.channels, t.channels);
        assert_eq!(back.samples, t.samples);
        assert_eq!(back.times, t.times);
    }

    #[test]
    fn classes() {
        assert_eq!(channel_class("V_3"), ChannelClass::Voltage);
        assert_eq!(channel_class("omega_g2"), ChannelClass::Frequency);
        assert_eq!(channel_class("theta_9"), ChannelClass::Angle);
        assert_eq!(channel_class("PL_6"), ChannelClass::Load);
        assert_eq!(channel_class("vr1_g1"), ChannelClass::Internal);
    }

    #[test]
    fn window_is_half_open() {
        let mut t = Trajectory::new(vec!["x".into()], vec![0.0]);
        for k in 0..10 {
            t.push(k as f64 * 0.5, &[k as f64]);
        }
        let w = t.window(1.0, 3.0);
        assert_eq!(w.times, vec![1.0, 1.5, 2.0, 2.5]);
    }
}
