"""An aggressor's ServerHello looks like anybody else's.

The aggressor hides its PPET commitment in the server random. This script
draws nonces from both kinds of server, runs the uniformity battery, and
then does the same against a source with one stuck bit to show the battery
is not blind.
"""

import random

from odt import analysis

N = 5000


def show(title, report):
    print(f"{title}")
    print(f"  max |z| over 256 bits   {report.max_abs_z:6.2f}")
    print(f"  min per-position p      {report.min_position_p:6.4f}")
    print(f"  distinguisher advantage {report.advantage:+6.4f}"
          f"  (noise up to {analysis.advantage_threshold(report.n):.3f})")


def main():
    rng = random.Random(7)
    plain = analysis.plain_nonces(N, rng)
    show("aggressor vs plain", analysis.uniformity_test(analysis.aggressor_nonces(N, rng), plain))
    show("top bit cleared vs plain", analysis.uniformity_test(analysis.biased_nonces(N, rng), plain))


if __name__ == "__main__":
    main()
