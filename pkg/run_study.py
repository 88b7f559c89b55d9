"""Run the simulation study (settings grid) or the empirical subsampling study."""
import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from svyfosr.core.logging import configure_logging
from svyfosr.models.replicates import BootType
from svyfosr.schemas import ColumnMap, SamplingConfig, SubsampleScheme, SuperpopulationConfig
from svyfosr.services.datasets import load_dataset
from svyfosr.services.evaluation import aggregate_runs, reports_to_frame
from svyfosr.services.simulation import settings_grid
from svyfosr.services.study import STUDY_BASIS_DIM, StudyService
from svyfosr.utils.audit import write_manifest

METHODS = [b.value for b in BootType]
SCHEMES = [s.value for s in SubsampleScheme]


def main(argv=None):
    parser = argparse.ArgumentParser(description="Simulation study over the settings grid.")
    parser.add_argument("--out", default="study")
    parser.add_argument("--N", type=int, default=100_000)
    parser.add_argument("--reps", type=int, default=50)
    parser.add_argument("--num-boots", type=int, default=100)
    parser.add_argument("--methods", default=",".join(METHODS))
    parser.add_argument("--basis-dim", type=int, default=STUDY_BASIS_DIM)
    parser.add_argument("--baseline-only", action="store_true")
    parser.add_argument("--seed", type=int, default=2213)
    parser.add_argument("--parallel", type=int, default=None)
    parser.add_argument("--empirical", default=None, help="Dataset CSV to subsample instead of simulating")
    parser.add_argument("--schemes", default=",".join(SCHEMES), help="Subsampling schemes (--empirical)")
    parser.add_argument("--n", type=int, default=2000, help="Expected subsample size (--empirical)")
    parser.add_argument("--family", default="gaussian", help="Outcome family (--empirical)")
    args = parser.parse_args(argv)
    configure_logging()

    started = time.perf_counter()
    methods = [m for m in args.methods.split(",") if m]
    out = Path(args.out)

    if args.empirical:
        schemes = [s for s in args.schemes.split(",") if s]
        pop = load_dataset(args.empirical, ColumnMap())
        print(f"Empirical study: {pop.n} individuals, schemes {schemes}, n={args.n}...")
        reports, agreement = StudyService.run_empirical(
            pop, schemes, args.n, args.reps, args.num_boots, methods, args.seed,
            family=args.family, basis_dim=args.basis_dim, n_workers=args.parallel,
        )
        tables = {
            "study_runs": reports_to_frame(reports),
            "study_summary": aggregate_runs(reports),
            "study_agreement": agreement,
            "study_agreement_summary": StudyService.summarize_agreement(agreement),
        }
        config = {"data": args.empirical, "schemes": schemes, "n": args.n, "family": args.family}
    else:
        pcfg = SuperpopulationConfig(N=args.N, seed=args.seed)
        scfg = SamplingConfig()
        grid = [("baseline", pcfg, scfg)] if args.baseline_only else settings_grid(pcfg, scfg)
        reports = []
        for name, p, s in grid:
            print(f"Setting {name}: generating N={p.N} L={p.L}...")
            reports += StudyService.run_setting(
                name, p, s, args.reps, args.num_boots, methods, args.seed,
                basis_dim=args.basis_dim, n_workers=args.parallel,
            )
        tables = {"study_runs": reports_to_frame(reports), "study_summary": aggregate_runs(reports)}
        config = {"N": args.N, "settings": [name for name, _, _ in grid]}

    outputs = StudyService.write_tables(tables, out)
    write_manifest(
        out, "study", started, seed=args.seed,
        config={"reps": args.reps, "num_boots": args.num_boots, "methods": methods,
                "basis_dim": args.basis_dim, **config},
        outputs=outputs,
        results={"runs": len(reports)},
    )
    print(f"\nStudy completed: {len(reports)} runs written to {out}")
    return 0


if __name__ == "__main__":
    main()
