//! Toy engine speaking wire protocol v1 on stdio.
//!
//! Serves `info` and `step` with deterministic logits: a unit peak at
//! `(last context token + 1) % vocab_size` (0 on an empty context). Useful
//! for protocol conformance tests and as a minimal reference for real
//! engine adapters. Malformed requests get a structured error response
//! instead of crashing the process.

use std::io::{BufRead, Write};

use clap::Parser;
use prompteer::wire::{parse_request, Response};

#[derive(Parser)]
#[command(name = "prompteer-echo-engine", about = "Toy wire-protocol v1 engine")]
struct Opts {
    #[arg(long, default_value_t = 64)]
    vocab_size: usize,
    /// Comma-separated language codes reported by `info`.
    #[arg(long, default_value = "en")]
    languages: String,
}

fn main() -> std::io::Result<()> {
    let opts = Opts::parse();
    let languages: Vec<String> = opts
        .languages
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();

    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match parse_request(&line) {
            Ok(req) => match req.op.as_str() {
                "info" => Response::info(opts.vocab_size, languages.clone()),
                "step" => {
                    let context = req.context.unwrap_or_default();
                    match context.iter().find(|&&t| t as usize >= opts.vocab_size) {
                        Some(t) => Response::error(format!(
                            "context token {t} out of range for vocab {}",
                            opts.vocab_size
                        )),
                        None => {
                            let peak = context
                                .last()
                                .map_or(0, |&t| (t as usize + 1) % opts.vocab_size);
                            let mut logits = vec![0.0f32; opts.vocab_size];
                            logits[peak] = 1.0;
                            Response::logits(logits)
                        }
                    }
                }
                _ => unreachable!("parse_request validates ops"),
            },
            Err(message) => Response::error(message),
        };
        let encoded = serde_json::to_string(&response).expect("serializable response");
        out.write_all(encoded.as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}
