"""Run every verification claim at small settings, with its negative control.

Each claim is first checked as stated, then with a deliberately falsified
bound; a checker worth trusting must reject the second version.
"""

import json

from subfw.verify import CLAIMS

small = {
    "lemma1": {"seeds": 2, "max_iters": 300},
    "lemma2": {"m": 50, "p": 5, "trials": 50_000},
    "lemma3": {"trials": 50_000},
    "theorem1": {"seeds": 30},
    "theorem2": {"seeds": 10},
    "dropbound": {"seeds": 6, "max_iters": 300},
}

for name, kwargs in small.items():
    real = CLAIMS[name](seed=0, **kwargs)
    control = CLAIMS[name](seed=0, negative_control=True, **kwargs)
    print(f"{name:<10} claim {'holds' if real['pass'] else 'FAILS'}   control {'rejected' if not control['pass'] else 'ACCEPTED'}")
    print("           ", json.dumps({k: real[k] for k in ("estimate", "std_error", "bound")}))
