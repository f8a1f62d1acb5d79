from subrank.cli import subrank

if __name__ == "__main__":
    raise SystemExit(subrank())
