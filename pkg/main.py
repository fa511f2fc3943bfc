import sys

from run_forest import main

if __name__ == "__main__":
    sys.exit(main())
