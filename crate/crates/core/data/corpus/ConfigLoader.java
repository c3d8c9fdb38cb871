package corpus;

import java.io.BufferedReader;
import java.io.FileReader;
import java.util.ArrayList;
import java.util.List;

public class ConfigLoader {
    private final String path;

    public ConfigLoader(String path) {
        this.path = path;
    }

    public List<String> entries() {
        List<String> out = new ArrayList<>();
        BufferedReader reader = new BufferedReader(new FileReader(path));
        String line = reader.readLine();
        while (line != null) {
            out.add(line.trim());
            line = reader.readLine();
        }
        return out;
    }
}
