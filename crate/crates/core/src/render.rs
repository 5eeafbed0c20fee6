//! Raster rendering of trajectories for thumbnails and external embedders.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::metrics::Representation;
use crate::sim::{AgentType, Trajectory};

pub const DEFAULT_TRAIL: usize = 100;
const BODY: u8 = 255;
const TRAIL: u8 = 160;

/// Row-major 8-bit image with 1 (agnostic) or 3 (aware: R = type A, G = type B)
/// channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

impl Raster {
    fn new(width: u32, height: u32, channels: u8) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![0; width as usize * height as usize * channels as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.index(x, y, c)]
    }

    fn index(&self, x: u32, y: u32, c: u8) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize + c as usize
    }

    fn mark(&mut self, x: u32, y: u32, c: u8, v: u8) {
        let i = self.index(x, y, c);
        self.data[i] = self.data[i].max(v);
    }

    /// Single channel `c` as its own one-channel raster.
    pub fn channel(&self, c: u8) -> Raster {
        let mut out = Raster::new(self.width, self.height, 1);
        for (dst, px) in out.data.iter_mut().zip(self.data.chunks_exact(self.channels as usize)) {
            *dst = px[c as usize];
        }
        out
    }

    pub fn mean_intensity(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / (self.data.len() as f64 * 255.0)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        match self.channels {
            1 => self.to_gray()?.write_to(&mut buf, image::ImageFormat::Png)?,
            3 => self.to_rgb()?.write_to(&mut buf, image::ImageFormat::Png)?,
            c => return Err(Error::Format(format!("cannot encode {c}-channel raster"))),
        }
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    fn to_gray(&self) -> Result<GrayImage> {
        ImageBuffer::<Luma<u8>, _>::from_raw(self.width, self.height, self.data.clone())
            .ok_or_else(|| Error::Format("raster size mismatch".into()))
    }

    fn to_rgb(&self) -> Result<RgbImage> {
        ImageBuffer::<Rgb<u8>, _>::from_raw(self.width, self.height, self.data.clone())
            .ok_or_else(|| Error::Format("raster size mismatch".into()))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RenderOptions {
    pub resolution: u32,
    /// Number of preceding frames traced behind each agent.
    pub trail: usize,
    /// Frame drawn; defaults to the last one.
    pub frame: Option<usize>,
}

impl RenderOptions {
    pub fn new(resolution: u32) -> Self {
        RenderOptions {
            resolution,
            trail: DEFAULT_TRAIL,
            frame: None,
        }
    }
}

/// Renders the final frame with recent-position trails.
pub fn render_trajectory(traj: &Trajectory, mode: Representation, resolution: u32) -> Result<Raster> {
    render_with(traj, mode, RenderOptions::new(resolution))
}

pub fn render_with(traj: &Trajectory, mode: Representation, opts: RenderOptions) -> Result<Raster> {
    if opts.resolution == 0 {
        return Err(Error::InvalidConfig("render resolution must be positive".into()));
    }
    let res = opts.resolution;
    let channels = match mode {
        Representation::Agnostic => 1,
        Representation::Aware => 3,
    };
    let mut img = Raster::new(res, res, channels);
    let cfg = &traj.config;
    let sx = res as f64 / cfg.width;
    let sy = res as f64 / cfg.height;
    let end = opts.frame.unwrap_or(traj.len() - 1).min(traj.len() - 1);
    let start = end.saturating_sub(opts.trail);

    let channel_of = |kind: AgentType| match mode {
        Representation::Agnostic => 0,
        Representation::Aware => match kind {
            AgentType::A => 0,
            AgentType::B => 1,
        },
    };
    // world y grows upward, image rows grow downward
    let to_pixel = |x: f64, y: f64| -> Option<(u32, u32)> {
        let px = (x * sx).floor();
        let py = ((cfg.height - y) * sy).floor();
        (px >= 0.0 && py >= 0.0 && px < res as f64 && py < res as f64).then(|| (px as u32, py as u32))
    };

    for t in start..end {
        for s in traj.frame(t) {
            if let Some((px, py)) = to_pixel(s.x, s.y) {
                img.mark(px, py, channel_of(s.kind), TRAIL);
            }
        }
    }

    let r = cfg.agent_radius;
    for s in traj.frame(end) {
        let c = channel_of(s.kind);
        let x0 = (((s.x - r) * sx).floor().max(0.0)) as u32;
        let x1 = (((s.x + r) * sx).ceil().min(res as f64 - 1.0)).max(0.0) as u32;
        let y0 = (((cfg.height - s.y - r) * sy).floor().max(0.0)) as u32;
        let y1 = (((cfg.height - s.y + r) * sy).ceil().min(res as f64 - 1.0)).max(0.0) as u32;
        for py in y0..=y1 {
            for px in x0..=x1 {
                let (wx, wy) = pixel_center(px, py, sx, sy, cfg.height);
                if (wx - s.x).hypot(wy - s.y) <= r {
                    img.mark(px, py, c, BODY);
                }
            }
        }
    }
    Ok(img)
}

/// World coordinates of a pixel's center.
pub fn pixel_center(px: u32, py: u32, sx: f64, sy: f64, height: f64) -> (f64, f64) {
    ((px as f64 + 0.5) / sx, height - (py as f64 + 0.5) / sy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::Genome;
    use crate::sim::{AgentState, SimConfig};

    fn static_traj(kinds: &[AgentType]) -> Trajectory {
        let frame: Vec<AgentState> = kinds
            .iter()
            .enumerate()
            .map(|(i, &k)| AgentState::new(60.0 + 90.0 * i as f64, 100.0 + 40.0 * i as f64, 0.0, k))
            .collect();
        Trajectory::from_frames(vec![frame; 5], Genome::homogeneous([0.0; 4], 0.5), 0, SimConfig::default())
            .unwrap()
    }

    #[test]
    fn zero_resolution_rejected() {
        let t = static_traj(&[AgentType::A, AgentType::B]);
        assert!(render_trajectory(&t, Representation::Agnostic, 0).is_err());
    }

    #[test]
    fn static_swarm_draws_exactly_the_discs() {
        let t = static_traj(&[AgentType::A, AgentType::B, AgentType::A]);
        let res = 100;
        let img = render_trajectory(&t, Representation::Agnostic, res).unwrap();
        let cfg = &t.config;
        let (sx, sy) = (res as f64 / cfg.width, res as f64 / cfg.height);
        for py in 0..res {
            for px in 0..res {
                let (wx, wy) = pixel_center(px, py, sx, sy, cfg.height);
                let inside = t
                    .frame(0)
                    .iter()
                    .any(|s| (wx - s.x).hypot(wy - s.y) <= cfg.agent_radius);
                assert_eq!(img.get(px, py, 0) > 0, inside, "pixel ({px},{py})");
            }
        }
    }

    #[test]
    fn all_a_swarm_leaves_green_empty() {
        let t = static_traj(&[AgentType::A, AgentType::A]);
        let img = render_trajectory(&t, Representation::Aware, 64).unwrap();
        assert_eq!(img.channels, 3);
        assert!(img.channel(1).data.iter().all(|&v| v == 0));
        assert!(img.channel(0).data.iter().any(|&v| v > 0));
    }

    #[test]
    fn png_encoding() {
        let t = static_traj(&[AgentType::A, AgentType::B]);
        for mode in [Representation::Agnostic, Representation::Aware] {
            let bytes = render_trajectory(&t, mode, 50).unwrap().to_png_bytes().unwrap();
            assert_eq!(&bytes[1..4], b"PNG");
        }
    }
}
