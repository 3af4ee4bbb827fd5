"""Who gets a Protected verdict, and who does not.

Three small worlds share one aggressor that expects a known agent image:

* the agent runs on a device whose O-TEE terminates its connections;
* the agent runs on a bare box and its traffic is forwarded through a
  protected device;
* the administrator mirrors part of the agent's memory onto the protected
  device and lets the O-TEE measure the mirror.

Run with ``python demos/honest_vs_routing.py``.
"""

from odt.scenario import ScenarioSpec, run_scenario

WORLD = """\
omega words=4096
locations m=5
device id=shielded otee=yes
device id=exposed
server mode=aggressor expect_seed=42 expect_size=4096
"""

CASES = {
    "honest": "process id=agent device=shielded seed=42 size=4096\n",
    "routed": "process id=agent device=exposed seed=42 size=4096\n"
              "route process=agent via=shielded\n",
    "mirrored 75%": "process id=agent device=exposed seed=42 size=4096\n"
                    "clone id=mirror src=agent device=shielded fraction=0.75\n"
                    "route process=agent via=shielded proxy=mirror\n",
}


def main():
    for label, body in CASES.items():
        spec = ScenarioSpec.parse(WORLD + body + "connect process=agent\n", label)
        result = run_scenario(spec, runs=400, seed=1)
        first = result.runs[0][0]
        print(f"{label:>13}: {result.protected:3d}/400 Protected"
              f"  (measured {first.measured_process or '-'} on {first.measured_device or '-'})")
    print(f"\nA 75% mirror survives five reads with probability 0.75^5 = {0.75**5:.3f}.")


if __name__ == "__main__":
    main()
