"""Regenerates transitions.json and buffer.jsonl for the fixture environments.

Every row is produced by executing the ground-truth program in this directory,
so the tables double as an oracle for the native Rust fixtures.
"""
import json
import pathlib

HERE = pathlib.Path(__file__).parent


def load(name):
    scope = {}
    exec((HERE / name / "ground_truth.py").read_text(), scope)
    return scope["Environment"]


def step(env_cls, s, a):
    env = env_cls()
    env.set_state(s)
    s2, r, d = env.step(a)
    return {"s": s, "a": a, "r": float(r), "s_next": int(s2), "d": bool(d)}


def write_table(name, n_states, n_actions):
    env_cls = load(name)
    rows = [step(env_cls, s, a) for s in range(n_states) for a in range(n_actions)]
    with open(HERE / name / "transitions.json", "w") as f:
        f.write("[\n")
        f.write(",\n".join("  " + json.dumps(r) for r in rows))
        f.write("\n]\n")


def step_box(env_cls, s, a):
    env = env_cls()
    env.set_state(s)
    s2, r, d = env.step(a)
    return {"s": s, "a": a, "r": float(r), "s_next": [float(x) for x in s2], "d": bool(d)}


def write_buffer(name, episodes, stepper=step):
    env_cls = load(name)
    with open(HERE / name / "buffer.jsonl", "w") as f:
        for start, actions in episodes:
            s = start
            for a in actions:
                row = stepper(env_cls, s, a)
                f.write(json.dumps(row) + "\n")
                s = row["s_next"]
                if row["d"]:
                    break


write_table("lineworld", 10, 2)
write_table("minicliff", 12, 4)
write_buffer("lineworld", [
    (0, [0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 1]),
    (0, [1] * 9),
    (5, [1, 0, 1, 1, 1, 1]),
])
write_buffer("minicliff", [
    (8, [1, 0, 1, 1, 2, 3, 0, 0, 3]),
    (8, [0, 1, 1, 1, 2]),
    (8, [2, 3, 0, 1, 2, 0, 1, 1, 1, 2]),
])
write_buffer("tracking", [
    ([0.0], [[0.0], [0.5], [-2.0], [1.25], [2.0], [-0.5], [0.0], [0.25], [1.0], [-1.0]]),
    ([3.0], [[-0.125], [-0.5], [1.75], [-1.5], [0.0], [0.5], [0.0]]),
], stepper=step_box)
