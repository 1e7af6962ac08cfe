"""Corpus command: gen-data."""

from .. import output
from ... import config, data
from .helpers import ConfigOption, OutOption, SeedOption, SetOption, exit_on_error, load_experiment, run_dir


def gen_data(
    config_path: ConfigOption = None,
    overrides: SetOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
) -> None:
    """Generate the train/dev/test corpora into the run directory."""
    cfg = load_experiment(config_path, overrides, seed)
    target = run_dir(out)

    output.header("Generating corpus")
    rows = []
    with exit_on_error():
        for split in config.SPLITS:
            corpus, report = data.generate_with_report(cfg.data.synth_spec(split))
            path = cfg.data.corpus_path(split, target)
            data.save_corpus(path, corpus)
            rows.append(
                {
                    "split": split,
                    "utterances": report.utterances,
                    "frames": report.frames,
                    "rejected": report.rejected,
                    "path": str(path),
                }
            )
    config.write_config(cfg, target / "config.toml")

    output.print_corpus_summary(rows)
    output.success(f"Corpus written to {target}")
