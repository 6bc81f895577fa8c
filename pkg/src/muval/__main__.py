from muval.cli import main

main()
