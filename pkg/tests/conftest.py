"""Shared fixtures: a micro config whose full training run takes ~1 s."""
import json

import pytest


def micro_cfg_dict(**over) -> dict:
    data = {
        "env": {"grid_size": 5, "n_scouts": 1, "n_captors": 1, "n_prey": 1,
                "vision_scout": 1, "vision_captor": 1, "episode_limit": 8},
        "model": {"d_h": 4, "d_k": 3, "gnn_layers": 1, "mixer_embed": 2},
        "group": {"m": 2, "k": 2},
        "train": {"total_steps": 120, "eval_interval": 40, "eval_episodes": 2,
                  "checkpoint_interval": 60, "batch_episodes": 4,
                  "buffer_capacity": 50, "target_period": 10,
                  "epsilon_anneal_steps": 100},
        "seed": 0,
        "run_id": "micro",
    }
    for key, value in over.items():
        if isinstance(value, dict):
            data.setdefault(key, {}).update(value)
        else:
            data[key] = value
    return data


@pytest.fixture
def micro_cfg_file(tmp_path):
    def write(name: str = "config.json", **over) -> str:
        path = tmp_path / name
        path.write_text(json.dumps(micro_cfg_dict(**over)) + "\n")
        return str(path)
    return write
