import sys

from qosnet import cli


def main():
    # Flags and an optional --config file describe the sweep, e.g.
    #   python main.py --scenario s1 --pit-size 5 --pit-size 10 --qos regular --qos prompt_reliable --seed 1 --seed 2
    return cli.main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
