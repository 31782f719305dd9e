import csv


def pretty_print_ranks(ranks_csv):
    "Pretty-print the aggregate output."
    with open(ranks_csv, newline="") as fp:
        r = csv.DictReader(fp)
        rows = list(r)

    rows.sort(key=lambda row: float(row["measured_rate"]))  # slowest-degrading first

    first = True
    for row in rows:
        #
        # display!
        #

        if first:
            print("")
            print("mRNA              window        pred_rate  half_life  measured")
            print("--------          ------        ---------  ---------  --------")
            first = False

        name = row["id"][:17]
        window = f"{row['window_start']}-{row['window_end']}"
        pred = f"{float(row['predicted_rate']):.3f}"
        half = float(row["predicted_half_life"])
        half = "N/A" if half != half else f"{half:.3f}"
        measured = f"{float(row['measured_rate']):.4f}"
        print(f"{name:<17} {window:<12} {pred:>9}  {half:>9}  {measured:>8}")


def pretty_print_scores(scores_csv):
    "Pretty-print the per-model score table written by report."
    with open(scores_csv, newline="") as fp:
        r = csv.DictReader(fp)
        rows = list(r)

    rows.sort(key=lambda row: float(row["public_mcrmse"] or "inf"))

    print("")
    print("model             public     private")
    print("--------          -------    -------")
    for row in rows:
        name = row["model"][:17]
        public = row["public_mcrmse"] and f"{float(row['public_mcrmse']):.5f}" or "N/A"
        private = row["private_mcrmse"] and f"{float(row['private_mcrmse']):.5f}" or "N/A"
        print(f"{name:<17} {public:>7}    {private:>7}")


def pretty_print_report(report):
    "Pretty-print one ScoreReport."
    print("")
    print(f"MCRMSE {report.mcrmse:.5f} over {report.n_nucleotides} nucleotides")
    for col, rmse in report.per_column_rmse.items():
        print(f"  {col:<14} {rmse:.5f}")
