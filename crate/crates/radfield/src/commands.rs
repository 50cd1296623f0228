use std::net::{TcpListener, TcpStream};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use radfield::cli::{Cli, Command, ConfigArgs, DisparityCommand, SessionArgs, StreamCommand};
use radfield::config::RunConfig;
use radfield::dataset::{read_dataset, write_dataset};
use radfield::io::{self, MapScale};
use radfield::netstream::{tcp_recv, tcp_send, OutgoingFrame, Transcript};
use radfield::pipelines::{self as pl, compare, eval_csv};
use radfield_core::codec::savings_csv;
use radfield_core::depthnav::{min_clearance, morph_open, opacity_mask, processed_disparity, Clearance};
use radfield_core::dynamic::{dynamic_checkpoint, parse_dynamic_checkpoint, render_dynamic, DeformationField};
use radfield_core::render::render_frame;
use radfield_core::scene::{generate_scene, SceneSpec};
use radfield_core::train::{loss_csv, PosedImage};
use radfield_core::wire::{FieldReference, SessionMode};
use radfield_core::MultiresField;

fn load_config(args: &ConfigArgs, preset: fn() -> RunConfig) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => io::read_json::<RunConfig>(p)?,
        None => preset(),
    };
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

enum Model {
    Static(MultiresField),
    Dynamic(MultiresField, DeformationField),
}

fn load_model(path: &Path) -> Result<Model> {
    let bytes = io::read_bytes(path)?;
    let (field, used) = MultiresField::from_checkpoint(&bytes).with_context(|| format!("{}", path.display()))?;
    if used == bytes.len() {
        return Ok(Model::Static(field));
    }
    let (canonical, defo) = parse_dynamic_checkpoint(&bytes).with_context(|| format!("{}", path.display()))?;
    Ok(Model::Dynamic(canonical, defo))
}

fn load_field(path: &Path) -> Result<MultiresField> {
    match load_model(path)? {
        Model::Static(f) => Ok(f),
        Model::Dynamic(..) => bail!("{}: expected a static checkpoint", path.display()),
    }
}

fn views(cfg: &RunConfig, data: Option<&Path>) -> Result<Vec<PosedImage>> {
    let v = match data {
        Some(dir) => read_dataset(dir)?,
        None => pl::training_set(cfg, &pl::oracle_scene(cfg)?)?,
    };
    Ok(pl::apply_alpha_setting(cfg, v))
}

fn write_losses(path: Option<&Path>, losses: &[f64]) -> Result<()> {
    if let Some(p) = path {
        io::write_bytes(p, loss_csv(losses).as_bytes())?;
    }
    Ok(())
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => io::write_bytes(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn mode(args: &SessionArgs) -> SessionMode {
    if args.intra {
        SessionMode::Intra
    } else {
        SessionMode::Reference
    }
}

fn write_transcript(path: Option<&Path>, t: &Transcript) -> Result<()> {
    if let Some(p) = path {
        io::write_bytes(p, t.csv().as_bytes())?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Scene { spec, out } => {
            let spec: SceneSpec = io::read_json(&spec)?;
            io::write_scene(&out, &generate_scene(&spec)?)?;
        }
        Command::Dataset { cfg, capture, out } => {
            let cfg = load_config(&cfg, RunConfig::default)?;
            let scene = pl::oracle_scene(&cfg)?;
            let v = if capture {
                let traj = &cfg.compression.trajectory;
                pl::render_views(&scene, &traj.poses()?, traj, cfg.oracle_samples, 0.0, false)?
            } else {
                pl::training_set(&cfg, &scene)?
            };
            write_dataset(&out, &v)?;
        }
        Command::Train { cfg, data, out, losses } => {
            let cfg = load_config(&cfg, RunConfig::default)?;
            ensure!(cfg.dynamic.is_none(), "the config has a dynamic section; use train-dynamic");
            let (field, report) = pl::train_static(&cfg, &views(&cfg, data.as_deref())?)?;
            io::write_bytes(&out, &field.to_checkpoint())?;
            write_losses(losses.as_deref(), &report.losses)?;
        }
        Command::TrainDynamic { cfg, data, out, losses } => {
            let cfg = load_config(&cfg, RunConfig::dynamic_preset)?;
            let (canonical, defo, report) = pl::train_dynamic_model(&cfg, &views(&cfg, data.as_deref())?)?;
            io::write_bytes(&out, &dynamic_checkpoint(&canonical, &defo))?;
            write_losses(losses.as_deref(), &report.losses)?;
        }
        Command::Render { cfg, checkpoint, time, samples, out } => {
            let cfg = load_config(&cfg, RunConfig::default)?;
            let n = samples.unwrap_or(cfg.oracle_samples);
            let (w, h) = (cfg.holdout.width(), cfg.holdout.image_height());
            let model = load_model(&checkpoint)?;
            for (i, p) in cfg.holdout.poses()?.iter().enumerate() {
                let maps = match &model {
                    Model::Static(f) => {
                        ensure!(time == 0.0, "--time needs a dynamic checkpoint");
                        render_frame(f, p, w, h, n)?
                    }
                    Model::Dynamic(c, d) => render_dynamic(c, d, p, time, w, h, n)?,
                };
                io::write_frame_maps(&out, &format!("view_{i:03}"), &maps)?;
            }
        }
        Command::Compress { cfg, checkpoint, oracle, out } => {
            let cfg = load_config(&cfg, RunConfig::compression_preset)?;
            let scene = pl::oracle_scene(&cfg)?;
            let (poses, frames) = pl::capture(&cfg, &scene)?;
            let records = if oracle {
                pl::compression(&cfg, &scene, cfg.oracle_samples, &poses, &frames)?
            } else {
                let field = match checkpoint {
                    Some(p) => load_field(&p)?,
                    None => pl::train_static(&cfg, &pl::apply_alpha_setting(&cfg, pl::training_set(&cfg, &scene)?))?.0,
                };
                pl::compression(&cfg, &field, cfg.compression.reference_samples, &poses, &frames)?
            };
            io::write_bytes(&out, savings_csv(&records).as_bytes())?;
        }
        Command::Stream { role: StreamCommand::Send { input, connect, q, session } } => {
            let field = load_field(&session.checkpoint)?;
            let frames: Vec<OutgoingFrame> = read_dataset(&input)?
                .into_iter()
                .map(|v| OutgoingFrame { frame: v.image.to_frame(), pose: v.pose, time: v.time })
                .collect();
            let renderer = FieldReference::new(&field, session.samples);
            let stream = TcpStream::connect(&connect).with_context(|| format!("connecting to {connect}"))?;
            let (out, acked) = tcp_send(stream, &renderer, mode(&session), q, &frames)?;
            write_transcript(session.transcript.as_deref(), &out.transcript)?;
            let sent = out.transcript.total(radfield::netstream::Direction::Send);
            let acked = acked.map_or("unavailable".to_string(), |a| a.to_string());
            println!("frames={} wire_bytes={sent} tcp_bytes_acked={acked}", frames.len());
        }
        Command::Stream { role: StreamCommand::Recv { listen, out, session } } => {
            let field = load_field(&session.checkpoint)?;
            let addr = if listen.contains(':') { listen } else { format!("127.0.0.1:{listen}") };
            let listener = TcpListener::bind(&addr).with_context(|| format!("listening on {addr}"))?;
            let (stream, _) = listener.accept()?;
            let renderer = FieldReference::new(&field, session.samples);
            let (got, received) = tcp_recv(stream, &renderer, mode(&session))?;
            for (i, f) in got.frames.iter().enumerate() {
                io::write_ppm(&out.join(format!("frame_{i:03}.ppm")), f)?;
            }
            write_transcript(session.transcript.as_deref(), &got.transcript)?;
            let wire = got.transcript.total(radfield::netstream::Direction::Recv);
            let received = received.map_or("unavailable".to_string(), |r| r.to_string());
            println!("frames={} wire_bytes={wire} tcp_bytes_received={received}", got.frames.len());
        }
        Command::Disparity { action: DisparityCommand::Process { input, opacity, tau, kernel, iters, out, region, clearance } } => {
            let disparity = io::read_map(&input)?;
            let opacity = io::read_map(&opacity)?;
            let mask = morph_open(&opacity_mask(&opacity, tau)?, kernel, iters)?;
            let processed = processed_disparity(&disparity, &mask)?;
            io::write_map(&out, &processed, MapScale::fit(&processed))?;
            if !region.is_empty() {
                let mut csv = String::from("region,min_clearance\n");
                for r in &region {
                    let c = match min_clearance(&processed, r)? {
                        Clearance::Distance(d) => d.to_string(),
                        Clearance::Unobstructed => "unobstructed".into(),
                    };
                    csv.push_str(&format!("{}:{}:{}:{},{c}\n", r.x, r.y, r.width, r.height));
                }
                write_or_print(clearance.as_deref(), &csv)?;
            }
        }
        Command::Eval { reference, test, out } => {
            ensure!(reference.len() == test.len(), "{} reference images but {} test images", reference.len(), test.len());
            let rows = reference
                .iter()
                .zip(&test)
                .enumerate()
                .map(|(i, (a, b))| Ok(compare(i, 0.0, &io::read_ppm(a)?.to_float(), &io::read_ppm(b)?.to_float(), 1.0)?))
                .collect::<Result<Vec<_>>>()?;
            write_or_print(out.as_deref(), &eval_csv(&rows))?;
        }
    }
    Ok(())
}
