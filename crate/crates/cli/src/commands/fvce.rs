use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use forge_evolve::fvce::{
    self, FvceError, IdentityRestorer, ImagePlane, LowPassRestorer, PrecomputedRestorer,
    RestorationBackend,
};
use rayon::prelude::*;

use super::{resolve, thread_pool, write_atomic, CmdResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Restorer {
    /// Every restoration equals the input (all-zero clues).
    Identity,
    /// Progressive Gaussian low-pass, coarse to fine.
    Lowpass,
    /// Read `<stem>.restore.<n>.png` files produced by an external pipeline.
    Precomputed,
}

#[derive(Debug, Args)]
pub struct FvceArgs {
    /// Directory of pre-cropped face images (PNG or JPEG).
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for `<stem>.fvce` containers.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Restorer::Lowpass)]
    pub restorer: Restorer,
    /// Where precomputed restorations live (defaults to the input directory).
    #[arg(long)]
    pub restorations: Option<PathBuf>,
    /// Number of restoration steps (N).
    #[arg(long, default_value_t = fvce::DEFAULT_STEPS)]
    pub steps: usize,
    /// Differences are taken for the last K+1 restorations.
    #[arg(long, default_value_t = fvce::DEFAULT_LAST)]
    pub last: usize,
    /// Largest blur radius of the low-pass restorer, in pixels.
    #[arg(long, default_value_t = fvce::DEFAULT_MAX_SIGMA)]
    pub max_sigma: f64,
    /// Also write one min-max normalized PNG per ExtraInfo plane.
    #[arg(long)]
    pub visualize: bool,
    /// Worker threads.
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
}

fn is_input_image(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) && !name.contains(".restore.")
}

fn list_images(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut images = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && is_input_image(&path) {
            images.push(path);
        }
    }
    images.sort();
    Ok(images)
}

fn process(
    image_path: &Path,
    args: &FvceArgs,
    output: &Path,
    backend: &dyn RestorationBackend,
) -> Result<(), FvceError> {
    let image = ImagePlane::load(image_path)?;
    let clues = fvce::extract_clues(&image, backend, Some(image_path), args.steps, args.last)?;
    let stem = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let bytes = fvce::encode_container(&clues.extra_info)?;
    write_atomic(&output.join(format!("{stem}.fvce")), &bytes)?;
    if args.visualize {
        for (i, plane) in fvce::visualize(&clues.extra_info).iter().enumerate() {
            let mut png = Vec::new();
            plane.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)?;
            write_atomic(&output.join(format!("{stem}.plane{i}.png")), &png)?;
        }
    }
    Ok(())
}

pub fn run(args: FvceArgs) -> CmdResult {
    if args.steps == 0 {
        return Err(Failure::io("--steps must be at least 1"));
    }
    if args.last + 1 > args.steps {
        return Err(Failure::io(format!(
            "--last {} needs at least {} steps, got {}",
            args.last,
            args.last + 1,
            args.steps
        )));
    }
    let input = resolve(&args.input)
        .map_err(|e| Failure::domain(format!("input directory {}: {e}", args.input.display())))?;
    if !input.is_dir() {
        return Err(Failure::domain(format!(
            "{} is not a directory",
            input.display()
        )));
    }
    std::fs::create_dir_all(&args.output)
        .map_err(|e| Failure::io(format!("{}: {e}", args.output.display())))?;
    let output = resolve(&args.output).map_err(Failure::io)?;
    let images =
        list_images(&input).map_err(|e| Failure::io(format!("{}: {e}", input.display())))?;

    let backend: Box<dyn RestorationBackend> = match args.restorer {
        Restorer::Identity => Box::new(IdentityRestorer),
        Restorer::Lowpass => Box::new(LowPassRestorer {
            max_sigma: args.max_sigma,
        }),
        Restorer::Precomputed => Box::new(PrecomputedRestorer {
            dir: args.restorations.clone(),
        }),
    };

    let pool = thread_pool(args.parallelism)?;
    let results: Vec<(PathBuf, Result<(), FvceError>)> = pool.install(|| {
        images
            .par_iter()
            .map(|p| (p.clone(), process(p, &args, &output, backend.as_ref())))
            .collect()
    });

    let mut failed = 0;
    for (path, result) in &results {
        if let Err(e) = result {
            failed += 1;
            eprintln!("error: {}: {e}", path.display());
        }
    }
    println!(
        "fvce: {} images, {} written, {} failed",
        results.len(),
        results.len() - failed,
        failed
    );
    if failed > 0 {
        return Err(Failure::domain(""));
    }
    Ok(())
}
