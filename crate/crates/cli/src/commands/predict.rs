use std::path::PathBuf;

use mbtnet::data::load_equalized;
use mbtnet::plane::Plane;
use mbtnet::supervision::png::{load_mask_png, save_png};
use mbtnet::supervision::sigmoid;
use mbtnet::tensor::Graph;

use super::{checkpoint_config, load_model, prepare_out};
use crate::error::{CliError, CliResult};
use crate::overlay::overlay;
use crate::PredictArgs;

pub const MASK_FILE: &str = "mask.png";
pub const OVERLAY_FILE: &str = "overlay.png";

#[derive(Clone, Debug)]
pub struct Prediction {
    pub mask: PathBuf,
    pub overlay: Option<PathBuf>,
    pub foreground: usize,
}

pub fn run(args: &PredictArgs) -> CliResult<Prediction> {
    let cfg = checkpoint_config(&args.checkpoint, &args.model)?;
    let image = load_equalized(&args.image)?;
    let (h, w) = image.dims();
    if h % 8 != 0 || w % 8 != 0 {
        return Err(CliError::usage(format!(
            "{} is {h}x{w}; both sides must be multiples of 8, pad the image to {}x{}",
            args.image.display(),
            h.div_ceil(8) * 8,
            w.div_ceil(8) * 8
        )));
    }
    let truth = match &args.gt {
        Some(p) => {
            let t = load_mask_png(p)?;
            if t.dims() != image.dims() {
                return Err(CliError::usage(format!(
                    "ground truth {} is {:?}, image is {:?}",
                    p.display(),
                    t.dims(),
                    image.dims()
                )));
            }
            Some(t)
        }
        None => None,
    };
    let (net, store) = load_model(&cfg, &args.checkpoint, (h, w))?;
    let mut g = Graph::<f32>::new();
    let x = g.constant(image.to_tensor());
    let out = net.forward(&mut g, &store, x)?;
    let threshold = cfg.train.threshold;
    let pred: Vec<bool> = g
        .value(out.final_logits)
        .data()
        .iter()
        .map(|&z| sigmoid(z as f64) > threshold)
        .collect();

    prepare_out(&args.out.out, args.out.force)?;
    let mask_path = args.out.out.join(MASK_FILE);
    let mask = Plane::new(h, w, pred.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())?;
    save_png(&mask, &mask_path)?;
    let overlay_path = match &truth {
        Some(t) => {
            let p = args.out.out.join(OVERLAY_FILE);
            overlay(&image, &pred, &t.to_binary()).save(&p)?;
            Some(p)
        }
        None => None,
    };
    let foreground = pred.iter().filter(|&&b| b).count();
    println!("{} foreground pixels; mask written to {}", foreground, mask_path.display());
    if let Some(p) = &overlay_path {
        println!("overlay written to {}", p.display());
    }
    Ok(Prediction {
        mask: mask_path,
        overlay: overlay_path,
        foreground,
    })
}
