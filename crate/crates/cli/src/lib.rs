//! `aq` — command-line harness for the digit-classifier robustness pipeline:
//! synthesize or prepare data, train, attack, transform, evaluate, fine-tune,
//! grid and risk.

#![forbid(unsafe_code)]

pub mod args;
pub mod commands;
pub mod manifest;

use aq_core::Error;

pub const USAGE: &str = "\
aq — acquisition-robustness harness for a LeNet digit classifier

USAGE:
  aq <subcommand> [flags]

SUBCOMMANDS:
  synth     generate the deterministic stand-in digit corpus as IDX files
            --out-dir DIR [--seed N]
  prepare   convert an IDX image/label pair into a native dataset file
            --images PATH --labels PATH --out PATH
  train     train LeNet from scratch
            --train DS --test DS --out CKPT [--config FILE] [--epochs N]
            [--batch N] [--lr X] [--momentum X] [--weight-decay X] [--seed N]
            [--threads N]
  finetune  continue training on the 100k clean+transformed corpus
            --checkpoint CKPT --train DS --test DS --out CKPT [--config FILE]
            [--epochs N] [--lr X] [--seed N] [--threads N]
  attack    craft an adversarial set with minimal-epsilon search
            --checkpoint CKPT --dataset DS --method fgs|fgv --out PATH
            [--count N] [--seed N] [--eps-start X] [--eps-step X]
            [--eps-max X] [--multiplier M] [--threads N]
  eval      accuracy of a checkpoint over a dataset
            --checkpoint CKPT --dataset DS [--transform NAME] [--fusion]
            [--seed N] [--report PATH] [--dump-pgm DIR] [--threads N]
  grid      full transform grid over all three datasets and both models
            --raw CKPT --finetuned CKPT --test DS --fgs DS --fgv DS
            --out-dir DIR [--seed N] [--threads N]
  risk      multi-frame risk estimate
            <frames> <threshold> <per-frame-error-probability>

Transforms: none, translation, noise, blur, crop-resize, combination,
binarize (plus 5-crops via --fusion or --transform 5-crops).

Exit codes: 0 success, 1 usage, 2 input/format, 3 runtime failure.
";

/// Exit code contract: 0 success, 1 usage, 2 input/format, 3 runtime.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Contract(_) => 1,
        Error::Io(_) | Error::Format(_) | Error::Consistency(_) => 2,
        Error::State(_) | Error::Training { .. } | Error::Degenerate(_) => 3,
    }
}

pub fn run(argv: &[String]) -> i32 {
    let Some((sub, rest)) = argv.split_first() else {
        eprint!("{USAGE}");
        return 1;
    };
    let result = match sub.as_str() {
        "synth" => commands::synth::run(rest),
        "prepare" => commands::prepare::run(rest),
        "train" => commands::train::run(rest),
        "finetune" => commands::finetune::run(rest),
        "attack" => commands::attack::run(rest),
        "eval" => commands::eval::run(rest),
        "grid" => commands::grid::run(rest),
        "risk" => commands::risk::run(rest),
        "--help" | "help" | "-h" => {
            print!("{USAGE}");
            return 0;
        }
        other => {
            eprintln!("unknown subcommand '{other}'\n");
            eprint!("{USAGE}");
            return 1;
        }
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}
