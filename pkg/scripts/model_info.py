"""Receptive field, parameter count and frame rate for the shipped model presets.

    python3 scripts/model_info.py
"""

from wavebeat.model import DESK_CONFIG, PAPER_CONFIG, build, param_count, receptive_field


def main():
    for name, cfg in (("full", PAPER_CONFIG), ("desk", DESK_CONFIG)):
        samples, seconds = receptive_field(cfg)
        print(f"{name:<5} receptive field {samples:>9} samples ({seconds:6.2f} s)  "
              f"parameters {param_count(build(cfg)):>9}  frame rate {cfg.frame_rate} Hz")


if __name__ == "__main__":
    main()
