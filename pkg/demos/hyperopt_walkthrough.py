"""Drive the ask/tell optimizer by hand and watch it converge.

First half: maximize a shifted concave quadratic over the unit square,
logging how the Lipschitz estimate, the phase alternation (global
sampling vs local quadratic steps) and the best point evolve. Second
half: run the bundled detector-tuning space and confirm the integer
dimension stays integral.

Run: python3 demos/hyperopt_walkthrough.py
"""

import numpy as np

from odkit import (
    SearchSpace,
    ask,
    best,
    get_objective,
    load_bundled_space,
    new_optimizer,
    tell,
)
from odkit.hyperopt import Dim


def main():
    space = SearchSpace((Dim("x", 0.0, 1.0), Dim("y", 0.0, 1.0)))
    f = get_objective("quad2")  # peak value 0 at (0.3, 0.7)
    state = new_optimizer(space, exploration_p=0.1, seed=5)

    print("maximizing -(x-0.3)^2 - (y-0.7)^2 over [0,1]^2, 60 evaluations")
    print(f"{'eval':>4} {'phase':<7} {'point':<22} {'value':>10} {'k_hat':>7}")
    for i in range(60):
        x = ask(state)
        phase = state.phase
        trial = tell(state, x, f(x))
        if i % 10 <= 1 or i == 59:  # adjacent pair, to catch both phases
            pt = np.array2string(trial.point, precision=3, floatmode="fixed")
            print(f"{i:>4} {phase:<7} {pt:<22} {trial.value:>10.2e} "
                  f"{state.lipschitz_k:>7.2f}")
    top = best(state)
    err = float(np.linalg.norm(top.point - [0.3, 0.7]))
    print(f"best: {np.array2string(top.point, precision=5)} "
          f"value {top.value:.2e} (distance to optimum {err:.1e})")
    print(f"trust-region radius ended at {state.tr_radius:.2e}, "
          f"{state.tr_fallbacks} degenerate fits fell back to global sampling\n")

    # The bundled space mixes one integer dimension with three log-scale
    # continuous knobs; candidates for the integer one come pre-rounded.
    space = load_bundled_space("table3")
    print("bundled space 'table3':")
    for d in space.dims:
        kind = "integer" if d.is_integer else "float"
        print(f"  {d.name:<16} [{d.lo}, {d.hi}] {kind}")

    lows, highs = space.lows, space.highs

    def score(p):
        z = (p - lows) / (highs - lows)
        return -float(np.sum((z - 0.4) ** 2))

    state = new_optimizer(space, seed=12)
    for _ in range(40):
        x = ask(state)
        tell(state, x, score(x))
    anchors_dim = [d.name for d in space.dims].index("ANCHOR_PER_GRID")
    seen = sorted({int(t.point[anchors_dim]) for t in state.trials})
    print(f"\n40 trials run; ANCHOR_PER_GRID values tried: {seen}")
    top = best(state)
    named = {d.name: round(float(v), 5) for d, v in zip(space.dims, top.point)}
    print(f"best configuration: {named} (score {top.value:.4f})")


if __name__ == "__main__":
    main()
