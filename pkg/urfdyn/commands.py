"""
Command registry for the urfdyn command-line harness.

Single source of truth for the subcommands `urfdyn` accepts. main.py builds
its argparse subparsers from this list, and `urfdyn --help` plus the
`get_help_text()` panel are generated from it, so the two never drift apart.

The registry only holds metadata (names, summaries, the files each command
writes). The code that runs lives in handlers.py.
"""

from typing import TypedDict


class CommandInfo(TypedDict):
    """Type definition for command information."""

    name: str  # Subcommand name as typed on the command line
    description: str  # One-line summary for the help display
    detailed: str  # Longer explanation used as the subparser description
    outputs: list[str]  # Files written below the output directory


COMMANDS: list[CommandInfo] = [
    {
        "name": "generate",
        "description": "Simulate rollouts and write a noisy transition dataset",
        "detailed": "Simulate the configured reference system from random initial states, "
        "add observation noise to every successor and write the transition pairs. "
        "Regenerating with the same seed produces byte-identical files.",
        "outputs": ["dataset.csv", "rollouts/rollout_<i>.csv", "manifest.json"],
    },
    {
        "name": "fit",
        "description": "Fit a URF model bundle to dataset.csv",
        "detailed": "Build the random feature map, optionally compress it with PCA, fit one "
        "Bayesian linear regression per output dimension and derive the credible "
        "ellipsoids. Logs the retained PCA energy and posterior condition numbers.",
        "outputs": ["model.json", "manifest.json"],
    },
    {
        "name": "predict",
        "description": "Roll out the mean model, an uncertainty tube and the true system",
        "detailed": "Load model.json and write the mean rollout, uncertainty tube samples, "
        "the ground-truth trajectory from the same initial state and the one-step "
        "predictive standard deviation along the mean rollout.",
        "outputs": ["predict/mean.csv", "predict/true.csv", "predict/tube/sample_<i>.csv",
                    "predict/predictive_std.csv", "manifest.json"],
    },
    {
        "name": "worstcase",
        "description": "Bound the trajectory cost over the learned uncertainty set",
        "detailed": "Solve for the worst-case and best-case weight realizations with the "
        "Frank-Wolfe shooting solver (one run per configured schedule plus the exact "
        "minimum-principle iteration) and write plot-ready costs, traces and trajectories.",
        "outputs": ["worstcase/costs.json", "worstcase/trace_<schedule>.csv",
                    "worstcase/trace_exact_pmp.csv", "worstcase/mean.csv", "worstcase/worst.csv",
                    "worstcase/best.csv", "worstcase/true.csv", "worstcase/tube/sample_<i>.csv",
                    "manifest.json"],
    },
    {
        "name": "sweep",
        "description": "Repeat generate, fit and worstcase over one config axis",
        "detailed": "Run a full generate/fit/worstcase cell for every value of the sweep "
        "axis (num_rollouts, alpha or schedule) and every sweep seed, then aggregate "
        "the cost bounds into sweep.csv. Cells run in parallel with --jobs.",
        "outputs": ["sweep/sweep.csv", "sweep/<axis>_<value>/seed_<s>/...", "manifest.json"],
    },
]


def get_command(name: str) -> CommandInfo:
    for cmd in COMMANDS:
        if cmd["name"] == name:
            return cmd
    raise KeyError(name)


def get_help_text() -> str:
    """Rich-markup command overview for the console."""
    lines = ["[bold]Commands:[/bold]"]
    for cmd in COMMANDS:
        padding = " " * (12 - len(cmd["name"]))
        lines.append(f"  [cyan]{cmd['name']}[/cyan]{padding}- {cmd['description']}")

    lines.append("")
    lines.append("[bold]Options:[/bold]")
    lines.append("  [cyan]--config PATH[/cyan]  - Experiment config or a previous manifest.json")
    lines.append("  [cyan]--out DIR[/cyan]      - Output directory (overrides output_dir)")
    lines.append("  [cyan]--seed N[/cyan]       - Global seed (overrides seed)")
    lines.append("  [cyan]--jobs N[/cyan]       - Parallel sweep cells")
    lines.append("  [cyan]--verbose[/cyan]      - Per-iteration solver logging")
    return "\n".join(lines)
