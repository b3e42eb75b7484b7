use aq_core::harness::{risk_majority_tail, risk_single_term, RiskQuery};
use aq_core::{Error, Result};

use crate::args::Args;

pub fn run(raw: &[String]) -> Result<()> {
    let args = Args::parse(raw, &[], &[])?;
    if args.positional.len() != 3 {
        return Err(Error::Config(
            "risk wants exactly three arguments: <frames> <threshold> <p>".into(),
        ));
    }
    let frames: u64 = args.positional[0]
        .parse()
        .map_err(|_| Error::Contract(format!("bad frame count '{}'", args.positional[0])))?;
    let threshold: u64 = args.positional[1]
        .parse()
        .map_err(|_| Error::Contract(format!("bad threshold '{}'", args.positional[1])))?;
    let p: f64 = args.positional[2]
        .parse()
        .map_err(|_| Error::Contract(format!("bad probability '{}'", args.positional[2])))?;

    let query = RiskQuery { frames, threshold, per_frame_error: p };
    let single = risk_single_term(&query)?;
    let tail = risk_majority_tail(&query)?;

    println!("frames n={frames}, threshold k={threshold}, per-frame error p={p}");
    println!("single-term  C(n,k) p^k                   = {single:.3e}");
    println!("binomial tail sum_j=k..n C(n,j) p^j q^n-j = {tail:.3e}");
    println!("(single-term omits the (1-p)^(n-k) factor; the tail is the probability of at least k wrong frames)");
    Ok(())
}
