//! Reference embedder speaking the plugin protocol on stdin/stdout.
//!
//! For a declared dimension `d`, the image bytes are split into `d` contiguous
//! chunks and the mean intensity of each chunk (scaled to [0, 1]) is returned.
//!
//! Options: `--name NAME`, `--dim D`, `--mode agnostic|aware`, and for exercising
//! host error paths `--extra` (answer with d+1 values), `--nan` (poison the first
//! value), `--delay-ms MS` (sleep before every answer).

use std::io::{self, BufReader, BufWriter};
use std::process::ExitCode;
use std::time::Duration;

use hetswarm::embed::{decode_image, encode_vector, read_frame, write_frame, Handshake};
use hetswarm::metrics::Representation;

struct Options {
    name: String,
    dim: usize,
    mode: Representation,
    extra: bool,
    nan: bool,
    delay: Duration,
}

fn parse() -> Result<Options, String> {
    let mut o = Options {
        name: "echo".into(),
        dim: 5,
        mode: Representation::Agnostic,
        extra: false,
        nan: false,
        delay: Duration::ZERO,
    };
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        let mut value = || args.next().ok_or_else(|| format!("{a} needs a value"));
        match a.as_str() {
            "--name" => o.name = value()?,
            "--dim" => o.dim = value()?.parse().map_err(|e| format!("--dim: {e}"))?,
            "--mode" => o.mode = value()?.parse().map_err(|e| format!("--mode: {e}"))?,
            "--delay-ms" => {
                o.delay = Duration::from_millis(value()?.parse().map_err(|e| format!("--delay-ms: {e}"))?)
            }
            "--extra" => o.extra = true,
            "--nan" => o.nan = true,
            other => return Err(format!("unknown option {other}")),
        }
    }
    Ok(o)
}

fn chunk_means(data: &[u8], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let lo = j * data.len() / dim;
            let hi = (j + 1) * data.len() / dim;
            if hi == lo {
                return 0.0;
            }
            data[lo..hi].iter().map(|&b| b as f64).sum::<f64>() / ((hi - lo) as f64 * 255.0)
        })
        .collect()
}

fn serve(o: &Options) -> io::Result<()> {
    let mut input = BufReader::new(io::stdin().lock());
    let mut output = BufWriter::new(io::stdout().lock());
    let hs = Handshake {
        name: o.name.clone(),
        mode: o.mode,
        dim: o.dim,
    };
    write_frame(&mut output, &serde_json::to_vec(&hs)?)?;
    while let Some(frame) = read_frame(&mut input)? {
        let img = decode_image(&frame).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let n = if o.extra { o.dim + 1 } else { o.dim };
        let mut v = chunk_means(&img.data, n);
        if o.nan {
            v[0] = f64::NAN;
        }
        if !o.delay.is_zero() {
            std::thread::sleep(o.delay);
        }
        write_frame(&mut output, &encode_vector(&v))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let opts = match parse() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("echo-embedder: {e}");
            return ExitCode::from(2);
        }
    };
    match serve(&opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("echo-embedder: {e}");
            ExitCode::FAILURE
        }
    }
}
