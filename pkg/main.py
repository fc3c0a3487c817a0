# main.py
import sys

from lattice_sternberg.cli import main

if __name__ == "__main__":
    sys.exit(main())
