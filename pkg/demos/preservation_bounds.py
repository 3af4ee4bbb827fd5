"""How much an aggressor can learn about memory it does not already know.

Each run answers a single equality question, so guessing even one 64-bit
word takes an absurd number of queries. The table shows the chosen-key
bound for a 2^17-word range as the query budget grows.
"""

from odt import analysis

I_SIZE = 2**17


def main():
    print(f"{'queries':>10}  {'log2 P':>8}")
    for exp10 in range(3, 10):
        p = analysis.preservation_bound_key(I_SIZE, 2**64, 10**exp10)
        print(f"{'1e' + str(exp10):>10}  {analysis.log2_prob(p):8.2f}")

    b = analysis.preservation_bound_general(analysis.PreservationParams(2**16, 0, 3, 64, 5))
    print(f"\nthree unknown 16-bit words, 5 queries: P = {float(b.probability):.3g}"
          f" (simple bound {float(b.simplified_bound):.3g})")


if __name__ == "__main__":
    main()
